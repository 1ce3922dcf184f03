//! Check-in corpora: ingestion, trip extraction, filtering, chronological
//! splits, synthetic worlds and the on-disk corpus directory.

mod ingest;
mod store;
mod synthetic;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{trip_time, PoiId, TimeModel, Trip, TripQuery, UserId, World};

pub use ingest::{
    estimate_departures, ingest_checkins, parse_checkins, split_into_trips, CheckInRecord,
    IngestOptions, RawTrip, SplitRule, DEFAULT_GAP_S, DEFAULT_LAST_STOP_S,
};
pub use store::{load_corpus, save_corpus};
pub use synthetic::{
    generate_synthetic_world, generate_synthetic_world_with_transitions, SyntheticWorldConfig,
};

/// A trip plus the metadata the corpus keeps for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTrip {
    pub trip: Trip,
    /// Arrival timestamp of the first check-in.
    pub start_ts: i64,
    pub budget_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub world: World,
    pub trips: Vec<CorpusTrip>,
    pub time_model: TimeModel,
    pub split: Split,
    pub n_users: usize,
}

impl Corpus {
    /// Checks the cross-references between trips, POIs, time model and split.
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.trips.iter().enumerate() {
            for &p in &t.trip.pois {
                self.world.get(p)?;
                self.time_model.duration(p)?;
            }
            if t.trip.user.index() >= self.n_users {
                return Err(Error::invalid(format!(
                    "trip {i} has user {} outside 0..{}",
                    t.trip.user, self.n_users
                )));
            }
        }
        let mut seen = HashSet::new();
        for &i in self
            .split
            .train
            .iter()
            .chain(&self.split.validation)
            .chain(&self.split.test)
        {
            if i >= self.trips.len() || !seen.insert(i) {
                return Err(Error::invalid(format!(
                    "split index {i} is out of range or repeated"
                )));
            }
        }
        if seen.len() != self.trips.len() {
            return Err(Error::invalid("split does not cover every trip"));
        }
        Ok(())
    }

    pub fn n_pois(&self) -> usize {
        self.world.len()
    }

    pub fn n_categories(&self) -> usize {
        self.world.n_categories()
    }

    pub fn trips_in<'a>(&'a self, idx: &'a [usize]) -> impl Iterator<Item = &'a CorpusTrip> + 'a {
        idx.iter().map(move |&i| &self.trips[i])
    }

    pub fn train_trips(&self) -> Vec<Trip> {
        self.trips_in(&self.split.train)
            .map(|t| t.trip.clone())
            .collect()
    }

    pub fn trip_time(&self, trip: &Trip) -> Result<f64> {
        trip_time(trip, &self.world, &self.time_model)
    }

    /// Query a real trip answers when the budget is its own cost times `slack`.
    pub fn query_for(&self, trip: &Trip, slack: f64) -> Result<TripQuery> {
        let t = self.trip_time(trip)?;
        TripQuery::new(trip.user, trip.start(), t * slack)
    }
}

/// Anything that is an ordered list of POIs visited by one user.
pub trait PoiSequence {
    fn user_key(&self) -> UserId;
    fn poi_ids(&self) -> Vec<PoiId>;
    fn retain_pois(&mut self, keep: &dyn Fn(PoiId) -> bool);
}

impl PoiSequence for Trip {
    fn user_key(&self) -> UserId {
        self.user
    }

    fn poi_ids(&self) -> Vec<PoiId> {
        self.pois.clone()
    }

    fn retain_pois(&mut self, keep: &dyn Fn(PoiId) -> bool) {
        self.pois.retain(|p| keep(*p));
    }
}

impl PoiSequence for CorpusTrip {
    fn user_key(&self) -> UserId {
        self.trip.user
    }

    fn poi_ids(&self) -> Vec<PoiId> {
        self.trip.pois.clone()
    }

    fn retain_pois(&mut self, keep: &dyn Fn(PoiId) -> bool) {
        self.trip.pois.retain(|p| keep(*p));
    }
}

/// POIs seen by fewer than `min_users_per_poi` distinct users are removed from
/// every trip, then trips shorter than `min_len` are dropped. One pass.
pub fn filter_corpus<T: PoiSequence + Clone>(
    trips: &[T],
    min_len: usize,
    min_users_per_poi: usize,
) -> Vec<T> {
    let mut users: HashMap<PoiId, HashSet<UserId>> = HashMap::new();
    for t in trips {
        for p in t.poi_ids() {
            users.entry(p).or_default().insert(t.user_key());
        }
    }
    let keep = |p: PoiId| users.get(&p).map_or(0, HashSet::len) >= min_users_per_poi;
    trips
        .iter()
        .cloned()
        .filter_map(|mut t| {
            t.retain_pois(&keep);
            (t.poi_ids().len() >= min_len).then_some(t)
        })
        .collect()
}

/// Sorts by start time (stable) and cuts 80/10/10 with floors for train and
/// validation; test takes the remainder.
pub fn chronological_split(start_ts: &[i64]) -> Result<Split> {
    let n = start_ts.len();
    if n < 10 {
        return Err(Error::CorpusTooSmall(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| start_ts[i]);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    Ok(Split {
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trip(user: u32, pois: &[u32]) -> Trip {
        Trip::new(UserId(user), pois.iter().map(|&p| PoiId(p)).collect()).unwrap()
    }

    #[test]
    fn split_sizes() {
        let sizes = |n: usize| {
            let s = chronological_split(&(0..n as i64).collect::<Vec<_>>()).unwrap();
            (s.train.len(), s.validation.len(), s.test.len())
        };
        assert_eq!(sizes(10), (8, 1, 1));
        assert_eq!(sizes(100), (80, 10, 10));
        assert_eq!(sizes(11), (8, 1, 2));
        assert!(matches!(
            chronological_split(&[1, 2, 3]),
            Err(Error::CorpusTooSmall(3))
        ));
    }

    #[test]
    fn filter_keeps_clean_corpus() {
        let trips: Vec<Trip> = (0..5).map(|u| trip(u, &[0, 1, 2])).collect();
        assert_eq!(filter_corpus(&trips, 3, 5), trips);
        assert!(filter_corpus::<Trip>(&[], 3, 5).is_empty());
    }

    #[test]
    fn rare_poi_shrinks_trip_below_min_len() {
        let mut trips: Vec<Trip> = (0..5).map(|u| trip(u, &[0, 1, 2])).collect();
        // POI 9 is seen by one user only; removing it leaves a length-2 trip.
        trips.push(trip(7, &[0, 9, 1]));
        let out = filter_corpus(&trips, 3, 5);
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|t| !t.pois.contains(&PoiId(9))));
    }

    proptest! {
        #[test]
        fn filter_output_satisfies_thresholds(raw in prop::collection::vec((0u32..8, prop::collection::hash_set(0u32..12, 1..6)), 0..40)) {
            let trips: Vec<Trip> = raw.into_iter().map(|(u, ps)| trip(u, &ps.into_iter().collect::<Vec<_>>())).collect();
            let out = filter_corpus(&trips, 3, 2);
            let mut users: HashMap<PoiId, HashSet<UserId>> = HashMap::new();
            for t in &trips {
                for &p in &t.pois {
                    users.entry(p).or_default().insert(t.user);
                }
            }
            for t in &out {
                prop_assert!(t.len() >= 3);
                for p in &t.pois {
                    prop_assert!(users[p].len() >= 2);
                }
            }
        }

        #[test]
        fn split_is_ordered_partition(ts in prop::collection::vec(0i64..50, 10..80)) {
            let s = chronological_split(&ts).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..ts.len()).collect::<Vec<_>>());
            let max_train = s.train.iter().map(|&i| ts[i]).max().unwrap();
            let min_val = s.validation.iter().map(|&i| ts[i]).min().unwrap();
            let max_val = s.validation.iter().map(|&i| ts[i]).max().unwrap();
            let min_test = s.test.iter().map(|&i| ts[i]).min().unwrap();
            prop_assert!(max_train <= min_val);
            prop_assert!(min_val <= min_test);
            prop_assert!(max_val <= min_test);
        }
    }
}
