//! Trip metrics, test-set evaluation, the popularity baseline and the
//! latency benchmark.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::candidates::{
    build_candidate_set, CandidateBuilder, CandidateSet, SlotCosts, TripHypergraph,
};
use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::generator::{DecodeMode, DecoderState, Generator};
use crate::geo::{TimeModel, Trip, TripQuery, World};

fn check_pair(rec: &Trip, real: &Trip) -> Result<()> {
    if real.len() < 2 {
        return Err(Error::DegenerateReference(real.len()));
    }
    if rec.start() != real.start() {
        return Err(Error::StartMismatch(rec.start(), real.start()));
    }
    Ok(())
}

/// Fraction of the real trip's non-start POIs that the recommendation covers.
pub fn hit_ratio(recommended: &Trip, real: &Trip) -> Result<f64> {
    check_pair(recommended, real)?;
    let hits = real.pois[1..]
        .iter()
        .filter(|p| recommended.pois[1..].contains(p))
        .count();
    Ok(hits as f64 / (real.len() - 1) as f64)
}

/// Fraction of ordered pairs among the overlapping POIs (taken in the
/// recommended order) whose relative order agrees with the real trip.
/// Zero when fewer than two POIs overlap.
pub fn osp(recommended: &Trip, real: &Trip) -> Result<f64> {
    check_pair(recommended, real)?;
    let rank: HashMap<_, _> = real.pois[1..]
        .iter()
        .enumerate()
        .map(|(i, p)| (*p, i))
        .collect();
    let overlap: Vec<usize> = recommended.pois[1..]
        .iter()
        .filter_map(|p| rank.get(p).copied())
        .collect();
    let k = overlap.len();
    if k < 2 {
        return Ok(0.0);
    }
    let mut matched = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            if overlap[i] < overlap[j] {
                matched += 1;
            }
        }
    }
    Ok(matched as f64 / (k * (k - 1) / 2) as f64)
}

/// Anything that turns a candidate set into a feasible trip.
pub trait Planner: Sync {
    fn plan(&self, cs: &CandidateSet, world: &World, tm: &TimeModel) -> Result<Trip>;
}

impl Planner for Generator {
    fn plan(&self, cs: &CandidateSet, world: &World, tm: &TimeModel) -> Result<Trip> {
        // Greedy decoding never touches the rng.
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        Ok(self
            .generate_trip(cs, world, tm, DecodeMode::Greedy, &mut rng)?
            .trip)
    }
}

/// Greedy planner that always appends the most visited feasible candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PopPlanner {
    visits: Vec<u64>,
}

impl PopPlanner {
    /// Counts every occurrence of every POI in the training trips.
    pub fn from_trips(n_pois: usize, trips: &[Trip]) -> Self {
        let mut visits = vec![0; n_pois];
        for t in trips {
            for p in &t.pois {
                if let Some(v) = visits.get_mut(p.index()) {
                    *v += 1;
                }
            }
        }
        Self { visits }
    }

    pub fn visits(&self, poi: crate::geo::PoiId) -> u64 {
        self.visits.get(poi.index()).copied().unwrap_or(0)
    }
}

impl Planner for PopPlanner {
    fn plan(&self, cs: &CandidateSet, world: &World, tm: &TimeModel) -> Result<Trip> {
        let costs = SlotCosts::new(cs, world, tm)?;
        let mut state = DecoderState::new(&cs.query, &costs)?;
        loop {
            let best = (0..cs.len())
                .filter(|&s| state.is_allowed(s))
                .max_by(|&a, &b| {
                    let (pa, pb) = (cs.pois[a], cs.pois[b]);
                    self.visits(pa).cmp(&self.visits(pb)).then(pb.cmp(&pa))
                });
            match best {
                Some(s) => state.advance(s, &costs)?,
                None => break,
            }
        }
        Trip::new(
            cs.query.user,
            state.selected().iter().map(|&s| cs.pois[s]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub query_id: usize,
    pub hr: f64,
    pub osp: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub hr_mean: f64,
    pub osp_mean: f64,
    pub n_queries: usize,
    pub per_query: Vec<QueryResult>,
}

impl EvalReport {
    pub fn from_rows(per_query: Vec<QueryResult>) -> Self {
        let n = per_query.len();
        let mean = |f: fn(&QueryResult) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_query.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            hr_mean: mean(|r| r.hr),
            osp_mean: mean(|r| r.osp),
            n_queries: n,
            per_query,
        }
    }

    /// `query_id,hr,osp,latency_ms` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("query_id,hr,osp,latency_ms\n");
        for r in &self.per_query {
            let _ = writeln!(s, "{},{},{},{:.3}", r.query_id, r.hr, r.osp, r.latency_ms);
        }
        let lat = if self.n_queries == 0 {
            0.0
        } else {
            self.per_query.iter().map(|r| r.latency_ms).sum::<f64>() / self.n_queries as f64
        };
        let _ = writeln!(s, "mean,{},{},{:.3}", self.hr_mean, self.osp_mean, lat);
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Evaluates `planner` on the trips at `indices`. Each query uses the real
/// trip's user and start with the real trip's exact time cost as budget.
/// Runs in parallel on the current rayon pool; rows keep input order.
pub fn evaluate<P: Planner + ?Sized>(
    planner: &P,
    corpus: &Corpus,
    indices: &[usize],
    builder: &CandidateBuilder,
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let rows = indices
        .par_iter()
        .map(|&i| {
            let real = &corpus.trips[i].trip;
            let q = corpus.query_for(real, 1.0)?;
            let t0 = Instant::now();
            let cs = builder.build(&q, &corpus.world)?;
            let rec = planner.plan(&cs, &corpus.world, &corpus.time_model)?;
            let latency_ms = t0.elapsed().as_secs_f64() * 1e3;
            Ok(QueryResult {
                query_id: i,
                hr: hit_ratio(&rec, real)?,
                osp: osp(&rec, real)?,
                latency_ms,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

pub fn bench_to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("n,median_ms,p95_ms\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.4},{:.4}", r.n, r.median_ms, r.p95_ms);
    }
    s
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Single-threaded end-to-end latency (candidate retrieval plus greedy
/// generation) for each candidate-set size, over `reps` queries drawn from
/// the corpus trips.
pub fn bench_latency<R: Rng + ?Sized>(
    gen: &Generator,
    corpus: &Corpus,
    hypergraph: &TripHypergraph,
    sizes: &[usize],
    reps: usize,
    rng: &mut R,
) -> Result<Vec<BenchRow>> {
    if reps == 0 || corpus.trips.is_empty() {
        return Err(Error::invalid(
            "benchmark needs at least one repetition and one trip",
        ));
    }
    let queries: Vec<TripQuery> = (0..reps)
        .map(|_| {
            let t = &corpus.trips[rng.gen_range(0..corpus.trips.len())].trip;
            corpus.query_for(t, 1.0)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        // One untimed warm-up query per size.
        let cs = build_candidate_set(&queries[0], hypergraph, &corpus.world, n)?;
        gen.plan(&cs, &corpus.world, &corpus.time_model)?;
        let mut times = Vec::with_capacity(reps);
        for q in &queries {
            let t0 = Instant::now();
            let cs = build_candidate_set(q, hypergraph, &corpus.world, n)?;
            gen.plan(&cs, &corpus.world, &corpus.time_model)?;
            times.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        out.push(BenchRow {
            n,
            median_ms: percentile(&times, 0.5),
            p95_ms: percentile(&times, 0.95),
        });
    }
    Ok(out)
}
