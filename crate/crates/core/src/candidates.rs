//! Candidate retrieval: a trip hypergraph over training trips, plus spatial
//! padding to a fixed candidate-set size.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::geo::{haversine_distance, Poi, PoiId, TimeModel, Trip, TripQuery, World};

/// One hyperedge per training trip, linking every POI on it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripHypergraph {
    edges: Vec<Vec<PoiId>>,
    incidence: HashMap<PoiId, Vec<usize>>,
}

impl TripHypergraph {
    pub fn build(trips: &[Trip]) -> Self {
        let mut g = Self::default();
        for t in trips {
            let e = g.edges.len();
            let mut vertices = t.pois.clone();
            vertices.sort_unstable();
            vertices.dedup();
            for &p in &vertices {
                g.incidence.entry(p).or_default().push(e);
            }
            g.edges.push(vertices);
        }
        g
    }

    pub fn edges(&self) -> &[Vec<PoiId>] {
        &self.edges
    }

    pub fn incidence(&self, poi: PoiId) -> &[usize] {
        self.incidence.get(&poi).map_or(&[], Vec::as_slice)
    }

    /// Every POI sharing a hyperedge with `start`, excluding `start`.
    pub fn neighbors(&self, start: PoiId) -> BTreeSet<PoiId> {
        self.incidence(start)
            .iter()
            .flat_map(|&e| self.edges[e].iter().copied())
            .filter(|&p| p != start)
            .collect()
    }
}

/// Fixed-length candidate list for one query. Slot 0 is the start POI.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub query: TripQuery,
    pub pois: Vec<PoiId>,
    /// Slots `1..=n_hypergraph` came from the hypergraph; the rest are spatial padding.
    pub n_hypergraph: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn slot_of(&self, poi: PoiId) -> Option<usize> {
        self.pois.iter().position(|&p| p == poi)
    }

    /// Replaces entries so every POI of `target` is present: the farthest
    /// padding entries go first, then the farthest hypergraph entries.
    /// Slot 0 and POIs already on `target` are never replaced.
    pub fn augment_with(&mut self, target: &Trip) -> Result<()> {
        if target.start() != self.pois[0] {
            return Err(Error::StartMismatch(target.start(), self.pois[0]));
        }
        let wanted: BTreeSet<PoiId> = target.pois.iter().copied().collect();
        let missing: Vec<PoiId> = target
            .pois
            .iter()
            .copied()
            .filter(|p| !self.pois.contains(p))
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        let hyper_end = 1 + self.n_hypergraph;
        let mut replaceable: Vec<usize> = (hyper_end..self.pois.len()).rev().collect();
        replaceable.extend((1..hyper_end).rev());
        replaceable.retain(|&s| !wanted.contains(&self.pois[s]));
        if replaceable.len() < missing.len() {
            return Err(Error::MissingTarget(missing[replaceable.len()]));
        }
        for (slot, poi) in replaceable.into_iter().zip(missing) {
            self.pois[slot] = poi;
        }
        Ok(())
    }
}

/// Retrieves candidate sets of size `n` from a hypergraph and a world.
#[derive(Debug, Clone)]
pub struct CandidateBuilder {
    pub hypergraph: TripHypergraph,
    pub n: usize,
}

impl CandidateBuilder {
    pub fn new(train_trips: &[Trip], n: usize) -> Self {
        Self {
            hypergraph: TripHypergraph::build(train_trips),
            n,
        }
    }

    pub fn build(&self, q: &TripQuery, world: &World) -> Result<CandidateSet> {
        build_candidate_set(q, &self.hypergraph, world, self.n)
    }

    /// Candidate set guaranteed to contain every POI of `target`.
    pub fn build_for_training(
        &self,
        q: &TripQuery,
        target: &Trip,
        world: &World,
    ) -> Result<CandidateSet> {
        let mut cs = self.build(q, world)?;
        cs.augment_with(target)?;
        Ok(cs)
    }
}

fn by_distance(from: &Poi, pois: impl Iterator<Item = Poi>) -> Vec<PoiId> {
    let mut v: Vec<(f64, PoiId)> = pois
        .map(|p| (haversine_distance(from.coords, p.coords), p.id))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.into_iter().map(|(_, id)| id).collect()
}

/// Start POI, then hypergraph neighbours nearest first (truncated to `n - 1`),
/// then the nearest remaining world POIs until the set has `n` entries.
pub fn build_candidate_set(
    q: &TripQuery,
    g: &TripHypergraph,
    world: &World,
    n: usize,
) -> Result<CandidateSet> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "candidate set size must be at least 2, got {n}"
        )));
    }
    if world.len() < n {
        return Err(Error::WorldTooSmall {
            available: world.len(),
            requested: n,
        });
    }
    let start = *world.get(q.start)?;
    let neighbors = g.neighbors(q.start);
    let mut hyper = by_distance(
        &start,
        neighbors
            .iter()
            .map(|&p| world.get(p).copied())
            .collect::<Result<Vec<_>>>()?
            .into_iter(),
    );
    hyper.truncate(n - 1);
    let n_hypergraph = hyper.len();

    let mut pois = Vec::with_capacity(n);
    pois.push(q.start);
    pois.extend(hyper);
    if pois.len() < n {
        let taken: BTreeSet<PoiId> = pois.iter().copied().collect();
        let pad = by_distance(
            &start,
            world
                .pois()
                .iter()
                .copied()
                .filter(|p| !taken.contains(&p.id)),
        );
        pois.extend(pad.into_iter().take(n - pois.len()));
    }
    Ok(CandidateSet {
        query: *q,
        pois,
        n_hypergraph,
    })
}

/// Per-slot durations and advance costs for one candidate set.
///
/// Rows of the `N x N` advance-cost matrix are computed on demand unless
/// [`SlotCosts::precompute`] has been called.
#[derive(Debug, Clone)]
pub struct SlotCosts {
    pois: Vec<Poi>,
    durations: Vec<f64>,
    walk_speed: f64,
    matrix: Option<Vec<f64>>,
}

impl SlotCosts {
    pub fn new(cs: &CandidateSet, world: &World, tm: &TimeModel) -> Result<Self> {
        let pois = cs
            .pois
            .iter()
            .map(|&p| world.get(p).copied())
            .collect::<Result<Vec<_>>>()?;
        let durations = cs
            .pois
            .iter()
            .map(|&p| tm.duration(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pois,
            durations,
            walk_speed: tm.walk_speed(),
            matrix: None,
        })
    }

    pub fn precompute(&mut self) {
        let n = self.pois.len();
        let mut m = Vec::with_capacity(n * n);
        for i in 0..n {
            m.extend(self.compute_row(i));
        }
        self.matrix = Some(m);
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn duration(&self, slot: usize) -> f64 {
        self.durations[slot]
    }

    fn compute_row(&self, from: usize) -> Vec<f64> {
        let a = &self.pois[from];
        self.pois
            .iter()
            .zip(&self.durations)
            .map(|(b, d)| {
                let transit = if a.id == b.id {
                    0.0
                } else {
                    haversine_distance(a.coords, b.coords) / self.walk_speed
                };
                d + transit
            })
            .collect()
    }

    /// Advance costs from slot `from` to every slot.
    pub fn advance_row(&self, from: usize) -> Vec<f64> {
        match &self.matrix {
            Some(m) => {
                let n = self.pois.len();
                m[from * n..(from + 1) * n].to_vec()
            }
            None => self.compute_row(from),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{advance_cost, CategoryId, Coords, UserId};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn line_world(n: usize) -> World {
        World::new(
            (0..n)
                .map(|i| Poi {
                    id: PoiId(i as u32),
                    coords: Coords::new(0.0, i as f64 * 0.001).unwrap(),
                    category: CategoryId(0),
                })
                .collect(),
        )
        .unwrap()
    }

    fn trip(pois: &[u32]) -> Trip {
        Trip::new(UserId(0), pois.iter().map(|&p| PoiId(p)).collect()).unwrap()
    }

    fn ids(v: &[u32]) -> Vec<PoiId> {
        v.iter().map(|&p| PoiId(p)).collect()
    }

    fn query(start: u32) -> TripQuery {
        TripQuery::new(UserId(0), PoiId(start), 3600.0).unwrap()
    }

    /// Four trips through l2 touching l1 and l3..l8, and one unrelated trip.
    fn figure_two() -> Vec<Trip> {
        vec![
            trip(&[1, 2, 3]),
            trip(&[2, 4, 5, 6]),
            trip(&[7, 2, 8]),
            trip(&[0, 9, 10]),
        ]
    }

    #[test]
    fn single_trip_hypergraph() {
        let g = TripHypergraph::build(&[trip(&[0, 1, 2])]);
        assert_eq!(g.edges(), &[ids(&[0, 1, 2])]);
        assert_eq!(g.incidence(PoiId(0)), &[0]);
    }

    #[test]
    fn disjoint_trips_have_disjoint_incidence() {
        let g = TripHypergraph::build(&[trip(&[0, 1]), trip(&[2, 3])]);
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.incidence(PoiId(1)), &[0]);
        assert_eq!(g.incidence(PoiId(3)), &[1]);
        assert_eq!(g.neighbors(PoiId(2)), BTreeSet::from([PoiId(3)]));
    }

    #[test]
    fn figure_two_neighbors() {
        let g = TripHypergraph::build(&figure_two());
        assert_eq!(
            g.neighbors(PoiId(2)),
            ids(&[1, 3, 4, 5, 6, 7, 8]).into_iter().collect()
        );
        assert!(g.neighbors(PoiId(42)).is_empty());
    }

    #[test]
    fn figure_two_candidate_set() {
        let world = line_world(12);
        let g = TripHypergraph::build(&figure_two());
        let cs = build_candidate_set(&query(2), &g, &world, 9).unwrap();
        // On the line, distance from l2 orders neighbours as l1, l3 (tie, lower id first), l4, ...
        assert_eq!(cs.pois, ids(&[2, 1, 3, 4, 5, 6, 7, 8, 0]));
        assert_eq!(cs.n_hypergraph, 7);
    }

    #[test]
    fn spatial_fallback_without_neighbors() {
        let world = line_world(10);
        let cs = build_candidate_set(&query(5), &TripHypergraph::default(), &world, 4).unwrap();
        assert_eq!(cs.pois, ids(&[5, 4, 6, 3]));
        assert_eq!(cs.n_hypergraph, 0);
    }

    #[test]
    fn world_too_small() {
        let world = line_world(3);
        let err =
            build_candidate_set(&query(0), &TripHypergraph::default(), &world, 4).unwrap_err();
        assert!(matches!(
            err,
            Error::WorldTooSmall {
                available: 3,
                requested: 4
            }
        ));
    }

    #[test]
    fn augmentation_replaces_farthest_padding() {
        let world = line_world(20);
        let g = TripHypergraph::build(&[trip(&[5, 6, 7])]);
        let mut cs = build_candidate_set(&query(5), &g, &world, 5).unwrap();
        assert_eq!(cs.pois, ids(&[5, 6, 7, 4, 3]));
        cs.augment_with(&trip(&[5, 12, 6, 15])).unwrap();
        assert_eq!(cs.pois, ids(&[5, 6, 7, 15, 12]));
        let mut cs = build_candidate_set(&query(5), &g, &world, 3).unwrap();
        assert!(matches!(
            cs.augment_with(&trip(&[5, 12, 13, 14])),
            Err(Error::MissingTarget(_))
        ));
    }

    #[test]
    fn slot_costs_agree_with_advance_cost() {
        let world = line_world(6);
        let tm = TimeModel::new(
            (0..6)
                .map(|i| (PoiId(i), 100.0 * i as f64))
                .collect::<HashMap<_, _>>(),
            2.0,
        )
        .unwrap();
        let cs = build_candidate_set(&query(2), &TripHypergraph::default(), &world, 5).unwrap();
        let mut costs = SlotCosts::new(&cs, &world, &tm).unwrap();
        let lazy: Vec<Vec<f64>> = (0..5).map(|i| costs.advance_row(i)).collect();
        costs.precompute();
        for i in 0..5 {
            assert_eq!(costs.advance_row(i), lazy[i]);
            for j in 0..5 {
                let a = world.get(cs.pois[i]).unwrap();
                let b = world.get(cs.pois[j]).unwrap();
                assert_eq!(lazy[i][j], advance_cost(a, b, &tm).unwrap());
            }
        }
    }

    proptest! {
        #[test]
        fn candidate_set_shape_and_truncation(
            coords in prop::collection::vec((-0.05f64..0.05, -0.05f64..0.05), 12..30),
            raw_trips in prop::collection::vec(prop::collection::hash_set(0u32..12, 2..8), 1..8),
            start in 0u32..12,
            n in 2usize..12,
        ) {
            let world = World::new(coords.iter().enumerate().map(|(i, &(a, b))| Poi {
                id: PoiId(i as u32),
                coords: Coords::new(a, b).unwrap(),
                category: CategoryId(0),
            }).collect()).unwrap();
            let trips: Vec<Trip> = raw_trips.into_iter().map(|s| trip(&s.into_iter().collect::<Vec<_>>())).collect();
            let g = TripHypergraph::build(&trips);
            let cs = build_candidate_set(&query(start), &g, &world, n).unwrap();
            prop_assert_eq!(cs.len(), n);
            prop_assert_eq!(cs.pois[0], PoiId(start));
            let uniq: BTreeSet<PoiId> = cs.pois.iter().copied().collect();
            prop_assert_eq!(uniq.len(), n);
            prop_assert_eq!(&cs, &build_candidate_set(&query(start), &g, &world, n).unwrap());

            // brute force: neighbours sorted by (distance, id), first n-1
            let s = world.get(PoiId(start)).unwrap().coords;
            let mut nb: Vec<(f64, PoiId)> = g.neighbors(PoiId(start)).into_iter()
                .map(|p| (haversine_distance(s, world.get(p).unwrap().coords), p)).collect();
            nb.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expect: Vec<PoiId> = nb.iter().take(n - 1).map(|x| x.1).collect();
            prop_assert_eq!(&cs.pois[1..1 + expect.len()], expect.as_slice());
        }
    }
}
