use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{chronological_split, Corpus, CorpusTrip};
use crate::error::{Error, Result};
use crate::geo::{
    advance_cost, haversine_distance, trip_time, CategoryId, Coords, Poi, PoiId, TimeModel, Trip,
    UserId, World, DEFAULT_WALK_SPEED, EARTH_RADIUS_M, TIME_EPS,
};

const CENTER: (f64, f64) = (40.75, -73.98);
const MAX_ATTEMPTS: usize = 1000;
const BASE_TS: i64 = 1_500_000_000;

/// Parameters of a synthetic world with a planted category-transition pattern.
///
/// `transition_concentration` controls how peaked each row of the planted
/// matrix is; `inf` makes every category have exactly one successor.
/// `mean_duration_s` holds one mean per category, or a single value shared by
/// all categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub n_pois: usize,
    pub n_categories: usize,
    pub grid_extent_m: f64,
    pub transition_concentration: f64,
    pub mean_duration_s: Vec<f64>,
    pub n_trips: usize,
    pub budget_range_s: [f64; 2],
    pub rng_seed: u64,
    pub n_users: usize,
    /// Length scale τ of the `exp(-distance / τ)` proximity factor.
    pub distance_scale_m: f64,
    pub min_trip_len: usize,
    pub max_trip_len: usize,
    pub walk_speed: f64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            n_pois: 200,
            n_categories: 5,
            grid_extent_m: 3000.0,
            transition_concentration: 4.0,
            mean_duration_s: vec![1800.0],
            n_trips: 2000,
            budget_range_s: [7200.0, 14400.0],
            rng_seed: 0,
            n_users: 50,
            distance_scale_m: 600.0,
            min_trip_len: 3,
            max_trip_len: 10,
            walk_speed: DEFAULT_WALK_SPEED,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_categories < 2 || self.n_pois < self.n_categories {
            return bad(format!(
                "need n_pois >= n_categories >= 2, got {} and {}",
                self.n_pois, self.n_categories
            ));
        }
        if self.mean_duration_s.len() != 1 && self.mean_duration_s.len() != self.n_categories {
            return bad(format!(
                "mean_duration_s must have 1 or {} entries, got {}",
                self.n_categories,
                self.mean_duration_s.len()
            ));
        }
        if self
            .mean_duration_s
            .iter()
            .any(|d| !(d.is_finite() && *d >= 0.0))
        {
            return bad("mean_duration_s entries must be finite and non-negative".into());
        }
        let [lo, hi] = self.budget_range_s;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!(
                "budget_range_s must satisfy 0 < min <= max, got [{lo}, {hi}]"
            ));
        }
        if !(self.transition_concentration > 0.0) {
            return bad("transition_concentration must be positive".into());
        }
        if !(self.grid_extent_m > 0.0 && self.distance_scale_m > 0.0 && self.walk_speed > 0.0) {
            return bad("grid_extent_m, distance_scale_m and walk_speed must be positive".into());
        }
        if self.n_users == 0 || self.min_trip_len == 0 || self.max_trip_len < self.min_trip_len {
            return bad("need n_users >= 1 and 1 <= min_trip_len <= max_trip_len".into());
        }
        let min_mean = self
            .mean_duration_s
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if lo < min_mean {
            return Err(Error::invalid(format!(
                "infeasible budget range: minimum budget {lo} s is below the shortest category duration {min_mean} s"
            )));
        }
        Ok(())
    }

    fn category_mean(&self, c: usize) -> f64 {
        if self.mean_duration_s.len() == 1 {
            self.mean_duration_s[0]
        } else {
            self.mean_duration_s[c]
        }
    }
}

/// Row-stochastic matrix with one preferred successor per category, chosen by
/// a random cyclic permutation so no category prefers itself.
fn planted_transitions(n: usize, concentration: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut succ = vec![0; n];
    for i in 0..n {
        succ[order[i]] = order[(i + 1) % n];
    }
    (0..n)
        .map(|c| {
            if concentration.is_infinite() {
                return (0..n)
                    .map(|j| if j == succ[c] { 1.0 } else { 0.0 })
                    .collect();
            }
            let scores: Vec<f64> = (0..n)
                .map(|j| match j {
                    _ if j == succ[c] => 1.0,
                    _ if j == c => -1.0,
                    _ => rng.gen_range(-0.5..0.5),
                })
                .collect();
            let w: Vec<f64> = scores
                .iter()
                .map(|s| (concentration * (s - 1.0)).exp())
                .collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect()
        })
        .collect()
}

pub fn generate_synthetic_world(cfg: &SyntheticWorldConfig) -> Result<Corpus> {
    generate_synthetic_world_with_transitions(cfg).map(|(c, _)| c)
}

/// Same as [`generate_synthetic_world`] but also returns the planted
/// category-transition matrix.
pub fn generate_synthetic_world_with_transitions(
    cfg: &SyntheticWorldConfig,
) -> Result<(Corpus, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let transitions = planted_transitions(cfg.n_categories, cfg.transition_concentration, &mut rng);

    let half = cfg.grid_extent_m / 2.0;
    let m_per_deg_lat = EARTH_RADIUS_M.to_radians();
    let m_per_deg_lon = m_per_deg_lat * CENTER.0.to_radians().cos();
    let mut pois = Vec::with_capacity(cfg.n_pois);
    let mut durations = HashMap::with_capacity(cfg.n_pois);
    for i in 0..cfg.n_pois {
        let x = rng.gen_range(-half..=half);
        let y = rng.gen_range(-half..=half);
        let cat = if i < cfg.n_categories {
            i
        } else {
            rng.gen_range(0..cfg.n_categories)
        };
        let coords = Coords::new(CENTER.0 + y / m_per_deg_lat, CENTER.1 + x / m_per_deg_lon)?;
        let id = PoiId(i as u32);
        pois.push(Poi {
            id,
            coords,
            category: CategoryId(cat as u32),
        });
        durations.insert(id, cfg.category_mean(cat) * rng.gen_range(0.75..1.25));
    }
    let world = World::new(pois)?;
    let tm = TimeModel::new(durations, cfg.walk_speed)?;

    let n = world.len();
    let mut proximity = vec![0.0; n * n];
    for a in world.pois() {
        for b in world.pois() {
            let d = haversine_distance(a.coords, b.coords);
            proximity[a.id.index() * n + b.id.index()] = (-d / cfg.distance_scale_m).exp();
        }
    }

    let mut trips = Vec::with_capacity(cfg.n_trips);
    for i in 0..cfg.n_trips {
        let user = UserId(rng.gen_range(0..cfg.n_users) as u32);
        let (trip, budget_s) =
            sample_trip(cfg, &world, &tm, &transitions, &proximity, user, &mut rng)?;
        trips.push(CorpusTrip {
            trip,
            start_ts: BASE_TS + i as i64 * 3600,
            budget_s,
        });
    }
    let split = chronological_split(&trips.iter().map(|t| t.start_ts).collect::<Vec<_>>())?;
    let corpus = Corpus {
        world,
        trips,
        time_model: tm,
        split,
        n_users: cfg.n_users,
    };
    corpus.validate()?;
    Ok((corpus, transitions))
}

fn sample_trip(
    cfg: &SyntheticWorldConfig,
    world: &World,
    tm: &TimeModel,
    transitions: &[Vec<f64>],
    proximity: &[f64],
    user: UserId,
    rng: &mut ChaCha8Rng,
) -> Result<(Trip, f64)> {
    let n = world.len();
    for _ in 0..MAX_ATTEMPTS {
        let budget = rng.gen_range(cfg.budget_range_s[0]..=cfg.budget_range_s[1]);
        let start = world.pois()[rng.gen_range(0..n)];
        let mut remaining = budget - tm.duration(start.id)?;
        if remaining < -TIME_EPS {
            continue;
        }
        let mut visited = vec![false; n];
        visited[start.id.index()] = true;
        let mut seq = vec![start.id];
        let mut prev = start;
        let mut weights = vec![0.0; n];
        while seq.len() < cfg.max_trip_len {
            let row = &transitions[prev.category.index()];
            let mut total = 0.0;
            for p in world.pois() {
                let j = p.id.index();
                weights[j] = 0.0;
                if visited[j] || advance_cost(&prev, p, tm)? > remaining {
                    continue;
                }
                weights[j] = row[p.category.index()] * proximity[prev.id.index() * n + j];
                total += weights[j];
            }
            if total <= 0.0 {
                break;
            }
            let mut u = rng.gen_range(0.0..total);
            let mut pick = None;
            for (j, w) in weights.iter().enumerate() {
                if *w > 0.0 {
                    pick = Some(j);
                    if u < *w {
                        break;
                    }
                    u -= w;
                }
            }
            let next = world.pois()[pick.expect("positive total weight")];
            remaining -= advance_cost(&prev, &next, tm)?;
            visited[next.id.index()] = true;
            seq.push(next.id);
            prev = next;
        }
        if seq.len() >= cfg.min_trip_len {
            let trip = Trip::new(user, seq)?;
            debug_assert!(trip_time(&trip, world, tm)? <= budget + TIME_EPS);
            return Ok((trip, budget));
        }
    }
    Err(Error::invalid(format!(
        "could not sample a trip of length >= {} in {MAX_ATTEMPTS} attempts; widen the budget range",
        cfg.min_trip_len
    )))
}
