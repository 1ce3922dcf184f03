//! POIs, check-ins, trips, queries and the deterministic time-cost model.
//!
//! Every time quantity is in seconds (`f64`). The cost of a trip is the
//! duration at the start POI plus, for every move, the transit time to the
//! next POI and the duration spent there.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by [`haversine_distance`].
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default walking speed in meters per second.
pub const DEFAULT_WALK_SPEED: f64 = 2.0;

/// Slack (seconds) allowed when comparing accumulated times against a budget.
///
/// Remaining time is tracked by repeated subtraction while trip cost is a
/// forward sum, so the two can disagree in the last few ulps.
pub const TIME_EPS: f64 = 1e-6;

macro_rules! id_newtype {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_newtype!(PoiId, "l");
id_newtype!(UserId, "u");
id_newtype!(CategoryId, "c");

/// Latitude/longitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coords {
    pub lat: f64,
    pub lon: f64,
}

impl Coords {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::invalid(format!(
                "coordinates out of range: ({lat}, {lon})"
            )));
        }
        Ok(Self { lat, lon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: PoiId,
    pub coords: Coords,
    pub category: CategoryId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckIn {
    pub user: UserId,
    pub poi: PoiId,
    pub arrival: i64,
    pub departure: i64,
}

impl CheckIn {
    pub fn new(user: UserId, poi: PoiId, arrival: i64, departure: i64) -> Result<Self> {
        if departure < arrival {
            return Err(Error::invalid(format!(
                "check-in at {poi} departs ({departure}) before it arrives ({arrival})"
            )));
        }
        Ok(Self {
            user,
            poi,
            arrival,
            departure,
        })
    }

    pub fn duration_s(&self) -> f64 {
        (self.departure - self.arrival) as f64
    }
}

/// An ordered POI sequence; `pois[0]` is the start.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trip {
    pub user: UserId,
    pub pois: Vec<PoiId>,
}

impl Trip {
    pub fn new(user: UserId, pois: Vec<PoiId>) -> Result<Self> {
        if pois.is_empty() {
            return Err(Error::invalid("a trip needs at least one POI"));
        }
        let mut seen = std::collections::HashSet::with_capacity(pois.len());
        if let Some(dup) = pois.iter().find(|p| !seen.insert(**p)) {
            return Err(Error::invalid(format!("POI {dup} repeats within a trip")));
        }
        Ok(Self { user, pois })
    }

    pub fn start(&self) -> PoiId {
        self.pois[0]
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripQuery {
    pub user: UserId,
    pub start: PoiId,
    pub budget_s: f64,
}

impl TripQuery {
    pub fn new(user: UserId, start: PoiId, budget_s: f64) -> Result<Self> {
        if !(budget_s > 0.0) || !budget_s.is_finite() {
            return Err(Error::invalid(format!(
                "budget must be positive, got {budget_s}"
            )));
        }
        Ok(Self {
            user,
            start,
            budget_s,
        })
    }
}

/// Expected POI durations plus walking speed.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeModel {
    durations: HashMap<PoiId, f64>,
    walk_speed: f64,
}

impl TimeModel {
    pub fn new(durations: HashMap<PoiId, f64>, walk_speed: f64) -> Result<Self> {
        if !(walk_speed > 0.0) {
            return Err(Error::invalid(format!(
                "walk speed must be positive, got {walk_speed}"
            )));
        }
        if let Some((id, d)) = durations
            .iter()
            .find(|(_, d)| !(**d >= 0.0) || !d.is_finite())
        {
            return Err(Error::invalid(format!(
                "duration for {id} is not a non-negative number: {d}"
            )));
        }
        Ok(Self {
            durations,
            walk_speed,
        })
    }

    pub fn duration(&self, poi: PoiId) -> Result<f64> {
        self.durations
            .get(&poi)
            .copied()
            .ok_or(Error::UnknownPoi(poi))
    }

    pub fn walk_speed(&self) -> f64 {
        self.walk_speed
    }

    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    /// Durations sorted by POI id.
    pub fn sorted_durations(&self) -> Vec<(PoiId, f64)> {
        let mut v: Vec<_> = self.durations.iter().map(|(k, v)| (*k, *v)).collect();
        v.sort_by_key(|(k, _)| *k);
        v
    }

    pub fn min_duration(&self) -> Option<f64> {
        self.durations.values().copied().reduce(f64::min)
    }
}

/// The POI universe. Ids are dense: `pois[i].id == PoiId(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pois: Vec<Poi>,
}

impl World {
    pub fn new(pois: Vec<Poi>) -> Result<Self> {
        for (i, p) in pois.iter().enumerate() {
            if p.id.index() != i {
                return Err(Error::invalid(format!(
                    "POI ids must be dense and ordered: position {i} holds {}",
                    p.id
                )));
            }
        }
        Ok(Self { pois })
    }

    pub fn get(&self, id: PoiId) -> Result<&Poi> {
        self.pois.get(id.index()).ok_or(Error::UnknownPoi(id))
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn n_categories(&self) -> usize {
        self.pois
            .iter()
            .map(|p| p.category.index() + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Great-circle distance in meters.
pub fn haversine_distance(a: Coords, b: Coords) -> f64 {
    // Order the endpoints so the result is bit-for-bit symmetric.
    let (a, b) = if (a.lat, a.lon) <= (b.lat, b.lon) {
        (a, b)
    } else {
        (b, a)
    };
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Mean stay duration over a POI's check-ins.
pub fn expected_duration(checkins: &[CheckIn]) -> Result<f64> {
    let first = checkins
        .first()
        .ok_or_else(|| Error::invalid("no observations for POI"))?;
    if let Some(other) = checkins.iter().find(|c| c.poi != first.poi) {
        return Err(Error::invalid(format!(
            "check-ins mix POIs {} and {}",
            first.poi, other.poi
        )));
    }
    let total: f64 = checkins.iter().map(CheckIn::duration_s).sum();
    Ok(total / checkins.len() as f64)
}

pub fn transit_time(from: &Poi, to: &Poi, tm: &TimeModel) -> f64 {
    if from.id == to.id {
        return 0.0;
    }
    haversine_distance(from.coords, to.coords) / tm.walk_speed
}

/// Duration at `next` plus the transit from `prev`.
pub fn advance_cost(prev: &Poi, next: &Poi, tm: &TimeModel) -> Result<f64> {
    Ok(tm.duration(next.id)? + transit_time(prev, next, tm))
}

pub fn trip_time(trip: &Trip, world: &World, tm: &TimeModel) -> Result<f64> {
    let mut prev = world.get(trip.start())?;
    let mut total = tm.duration(prev.id)?;
    for &id in &trip.pois[1..] {
        let next = world.get(id)?;
        total += advance_cost(prev, next, tm)?;
        prev = next;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(lat: f64, lon: f64) -> Coords {
        Coords { lat, lon }
    }

    fn poi(id: u32, lat: f64, lon: f64) -> Poi {
        Poi {
            id: PoiId(id),
            coords: c(lat, lon),
            category: CategoryId(0),
        }
    }

    fn tm(durations: &[(u32, f64)]) -> TimeModel {
        TimeModel::new(
            durations.iter().map(|(k, v)| (PoiId(*k), *v)).collect(),
            DEFAULT_WALK_SPEED,
        )
        .unwrap()
    }

    #[test]
    fn haversine_reference_values() {
        assert_eq!(haversine_distance(c(0.0, 0.0), c(0.0, 0.0)), 0.0);
        // R * pi / 180 and R * pi, evaluated at 40 digits.
        assert!(
            (haversine_distance(c(0.0, 0.0), c(0.0, 1.0)) - 111_194.926_644_558_74).abs() < 0.01
        );
        assert!(
            (haversine_distance(c(0.0, 0.0), c(0.0, 180.0)) - 20_015_086.796_020_57).abs() < 0.1
        );
    }

    #[test]
    fn transit_examples() {
        let tm = tm(&[(0, 0.0), (1, 0.0)]);
        let a = poi(0, 0.0, 0.0);
        assert_eq!(transit_time(&a, &a, &tm), 0.0);
        let b = poi(1, 0.0, 1.0);
        assert!((transit_time(&a, &b, &tm) - 55_597.463_322_279_37).abs() < 0.01);
        // 360 m due north at 2 m/s.
        let north = poi(
            1,
            360.0 / EARTH_RADIUS_M * 180.0 / std::f64::consts::PI,
            0.0,
        );
        assert!((transit_time(&a, &north, &tm) - 180.0).abs() < 1e-6);
    }

    #[test]
    fn expected_duration_examples() {
        let ck = |a, d| CheckIn::new(UserId(0), PoiId(3), a, d).unwrap();
        assert_eq!(expected_duration(&[ck(0, 600)]).unwrap(), 600.0);
        assert_eq!(
            expected_duration(&[ck(0, 600), ck(100, 1300)]).unwrap(),
            900.0
        );
        assert_eq!(
            expected_duration(&[ck(5, 5), ck(6, 6), ck(7, 7)]).unwrap(),
            0.0
        );
        let err = expected_duration(&[]).unwrap_err();
        assert!(err.to_string().contains("no observations for POI"));
    }

    #[test]
    fn advance_cost_examples() {
        let tm = tm(&[(0, 300.0), (1, 900.0)]);
        let a = poi(0, 0.0, 0.0);
        assert_eq!(advance_cost(&a, &a, &tm).unwrap(), 300.0);
        let north = poi(
            1,
            360.0 / EARTH_RADIUS_M * 180.0 / std::f64::consts::PI,
            0.0,
        );
        assert!((advance_cost(&a, &north, &tm).unwrap() - 1080.0).abs() < 1e-6);
        let stranger = poi(9, 0.0, 0.0);
        assert!(matches!(
            advance_cost(&a, &stranger, &tm),
            Err(Error::UnknownPoi(PoiId(9)))
        ));
    }

    #[test]
    fn trip_time_examples() {
        let north_lat = 360.0 / EARTH_RADIUS_M * 180.0 / std::f64::consts::PI;
        let world = World::new(vec![poi(0, 0.0, 0.0), poi(1, north_lat, 0.0)]).unwrap();
        let tm = tm(&[(0, 600.0), (1, 900.0)]);
        let single = Trip::new(UserId(0), vec![PoiId(0)]).unwrap();
        assert_eq!(trip_time(&single, &world, &tm).unwrap(), 600.0);
        let pair = Trip::new(UserId(0), vec![PoiId(0), PoiId(1)]).unwrap();
        assert!((trip_time(&pair, &world, &tm).unwrap() - 1680.0).abs() < 1e-6);
    }

    #[test]
    fn trip_rejects_repeats() {
        assert!(Trip::new(UserId(0), vec![PoiId(1), PoiId(2), PoiId(1)]).is_err());
        assert!(Trip::new(UserId(0), vec![]).is_err());
    }

    fn coords() -> impl Strategy<Value = Coords> {
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(lat, lon)| c(lat, lon))
    }

    proptest! {
        #[test]
        fn haversine_symmetric(a in coords(), b in coords()) {
            prop_assert_eq!(haversine_distance(a, b).to_bits(), haversine_distance(b, a).to_bits());
        }

        #[test]
        fn haversine_triangle(a in coords(), b in coords(), x in coords()) {
            let lhs = haversine_distance(a, x);
            let rhs = haversine_distance(a, b) + haversine_distance(b, x);
            prop_assert!(lhs <= rhs + 1e-6);
        }

        #[test]
        fn trip_time_is_additive(pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.0f64..3600.0), 2..8)) {
            let pois: Vec<Poi> = pts.iter().enumerate().map(|(i, (la, lo, _))| poi(i as u32, *la, *lo)).collect();
            let durs: Vec<(u32, f64)> = pts.iter().enumerate().map(|(i, p)| (i as u32, p.2)).collect();
            let world = World::new(pois.clone()).unwrap();
            let tm = tm(&durs);
            let ids: Vec<PoiId> = (0..pois.len() as u32).map(PoiId).collect();
            let head = Trip::new(UserId(0), ids[..ids.len() - 1].to_vec()).unwrap();
            let full = Trip::new(UserId(0), ids.clone()).unwrap();
            let last = &pois[pois.len() - 2];
            let step = advance_cost(last, &pois[pois.len() - 1], &tm).unwrap();
            let t_head = trip_time(&head, &world, &tm).unwrap();
            let t_full = trip_time(&full, &world, &tm).unwrap();
            prop_assert!((t_full - (t_head + step)).abs() <= 1e-9 * t_full.max(1.0));
            prop_assert!(t_full >= t_head);

            // independent pairwise summation
            let mut brute = durs[0].1;
            for w in 1..pois.len() {
                let d = haversine_distance(pois[w - 1].coords, pois[w].coords);
                brute += durs[w].1 + d / 2.0;
            }
            prop_assert!((brute - t_full).abs() <= 1e-9 * t_full.max(1.0));
        }

        #[test]
        fn expected_duration_bounded(ds in prop::collection::vec(0i64..100_000, 1..20)) {
            let cks: Vec<CheckIn> = ds.iter().map(|d| CheckIn::new(UserId(0), PoiId(0), 10, 10 + d).unwrap()).collect();
            let m = expected_duration(&cks).unwrap();
            let lo = *ds.iter().min().unwrap() as f64;
            let hi = *ds.iter().max().unwrap() as f64;
            prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
        }
    }
}
