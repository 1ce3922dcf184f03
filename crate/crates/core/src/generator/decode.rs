use rand::Rng;
use serde::Serialize;

use super::{Encoded, Generator};
use crate::candidates::{CandidateSet, SlotCosts};
use crate::error::{Error, Result};
use crate::geo::{TimeModel, Trip, TripQuery, World, TIME_EPS};
use crate::nn::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Categorical draw from the step distribution.
    Sample,
    /// Highest probability, lowest slot on ties.
    Greedy,
}

/// Bookkeeping for one partially decoded trip.
///
/// Time used is accumulated in the same order as
/// [`trip_time`](crate::geo::trip_time), so the final value equals the trip
/// time of the decoded trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    selected: Vec<usize>,
    visited: Vec<bool>,
    used_s: f64,
    budget_s: f64,
    /// Advance costs from the last selected slot.
    row: Vec<f64>,
}

impl DecoderState {
    /// State after visiting the start slot: `T_1 = budget - duration(start)`.
    pub fn new(q: &TripQuery, costs: &SlotCosts) -> Result<Self> {
        let used_s = costs.duration(0);
        if used_s > q.budget_s + TIME_EPS {
            return Err(Error::InfeasibleQuery {
                budget_s: q.budget_s,
                duration_s: used_s,
            });
        }
        let mut visited = vec![false; costs.len()];
        visited[0] = true;
        Ok(Self {
            selected: vec![0],
            visited,
            used_s,
            budget_s: q.budget_s,
            row: costs.advance_row(0),
        })
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    pub fn last_slot(&self) -> usize {
        *self.selected.last().expect("start is always selected")
    }

    pub fn step(&self) -> usize {
        self.selected.len()
    }

    pub fn used_s(&self) -> f64 {
        self.used_s
    }

    pub fn budget_s(&self) -> f64 {
        self.budget_s
    }

    pub fn remaining_s(&self) -> f64 {
        (self.budget_s - self.used_s).max(0.0)
    }

    pub fn advance_cost(&self, slot: usize) -> f64 {
        self.row[slot]
    }

    pub fn is_allowed(&self, slot: usize) -> bool {
        !self.visited[slot] && self.used_s + self.row[slot] <= self.budget_s + TIME_EPS
    }

    /// `true` for every unvisited slot whose advance cost fits the remaining time.
    pub fn allowed(&self) -> Vec<bool> {
        (0..self.visited.len())
            .map(|s| self.is_allowed(s))
            .collect()
    }

    pub fn advance(&mut self, slot: usize, costs: &SlotCosts) -> Result<()> {
        if slot >= self.visited.len() || !self.is_allowed(slot) {
            return Err(Error::InfeasibleMove(slot));
        }
        self.used_s += self.row[slot];
        self.visited[slot] = true;
        self.selected.push(slot);
        self.row = costs.advance_row(slot);
        Ok(())
    }
}

/// A finished generation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rollout {
    pub trip: Trip,
    /// Log-probability of each chosen POI after the start.
    pub step_log_probs: Vec<f64>,
    pub total_time_s: f64,
}

impl Rollout {
    pub fn step_probs(&self) -> Vec<f64> {
        self.step_log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self) -> f64 {
        self.step_log_probs.iter().sum()
    }
}

/// A decoding run recorded on a graph, for computing gradients.
#[derive(Debug, Clone)]
pub struct Trace {
    pub state: DecoderState,
    /// `1 x 1` log-probability node of each chosen slot.
    pub log_probs: Vec<Var>,
}

impl Trace {
    pub fn to_rollout(&self, g: &Graph, cs: &CandidateSet) -> Result<Rollout> {
        let trip = Trip::new(
            cs.query.user,
            self.state.selected().iter().map(|&s| cs.pois[s]).collect(),
        )?;
        Ok(Rollout {
            trip,
            step_log_probs: self.log_probs.iter().map(|&v| g.scalar(v)).collect(),
            total_time_s: self.state.used_s(),
        })
    }
}

pub(super) fn choose<R: Rng + ?Sized>(
    log_probs: &[f64],
    allowed: &[bool],
    mode: DecodeMode,
    rng: &mut R,
) -> usize {
    let live = || (0..allowed.len()).filter(|&s| allowed[s]);
    match mode {
        DecodeMode::Greedy => live().fold(None, |best: Option<usize>, s| match best {
            Some(b) if log_probs[b] >= log_probs[s] => Some(b),
            _ => Some(s),
        }),
        DecodeMode::Sample => {
            let mut u: f64 = rng.gen();
            let mut last = None;
            for s in live() {
                last = Some(s);
                let p = log_probs[s].exp();
                if u < p {
                    break;
                }
                u -= p;
            }
            last
        }
    }
    .expect("at least one allowed slot")
}

impl Generator {
    /// Decodes from the start slot until nothing is feasible or `max_len` is reached.
    pub fn decode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        q: &TripQuery,
        costs: &SlotCosts,
        mode: DecodeMode,
        rng: &mut R,
    ) -> Result<Trace> {
        let mut state = DecoderState::new(q, costs)?;
        let mut log_probs = Vec::new();
        while state.step() < self.cfg.max_len {
            let allowed = state.allowed();
            if !allowed.iter().any(|&a| a) {
                break;
            }
            let lp = self.step_log_probs(g, enc, &state, &allowed)?;
            let slot = choose(g.value(lp).data(), &allowed, mode, rng);
            log_probs.push(g.pick(lp, 0, slot)?);
            state.advance(slot, costs)?;
        }
        Ok(Trace { state, log_probs })
    }

    /// End-to-end generation.
    pub fn generate_trip<R: Rng + ?Sized>(
        &self,
        cs: &CandidateSet,
        world: &World,
        tm: &TimeModel,
        mode: DecodeMode,
        rng: &mut R,
    ) -> Result<Rollout> {
        let costs = SlotCosts::new(cs, world, tm)?;
        self.generate_with_costs(cs, world, &costs, mode, rng)
    }

    pub fn generate_with_costs<R: Rng + ?Sized>(
        &self,
        cs: &CandidateSet,
        world: &World,
        costs: &SlotCosts,
        mode: DecodeMode,
        rng: &mut R,
    ) -> Result<Rollout> {
        let q = cs.query;
        // Fail on an infeasible start before paying for the encoder.
        DecoderState::new(&q, costs)?;
        let mut g = Graph::new(&self.store);
        let enc = self.prepare(&mut g, &q, cs, world)?;
        let trace = self.decode(&mut g, &enc, &q, costs, mode, rng)?;
        trace.to_rollout(&g, cs)
    }

    /// Per-step log-probabilities of forcing `trip` through the decoder.
    pub fn replay_log_probs(
        &self,
        cs: &CandidateSet,
        trip: &Trip,
        world: &World,
        tm: &TimeModel,
    ) -> Result<Vec<f64>> {
        if trip.start() != cs.pois[0] {
            return Err(Error::StartMismatch(trip.start(), cs.pois[0]));
        }
        let q = cs.query;
        let costs = SlotCosts::new(cs, world, tm)?;
        let mut g = Graph::new(&self.store);
        let enc = self.prepare(&mut g, &q, cs, world)?;
        let mut state = DecoderState::new(&q, &costs)?;
        let mut out = Vec::with_capacity(trip.len() - 1);
        for &p in &trip.pois[1..] {
            let slot = cs.slot_of(p).ok_or(Error::MissingTarget(p))?;
            if !state.is_allowed(slot) {
                return Err(Error::InfeasibleMove(slot));
            }
            let allowed = state.allowed();
            let lp = self.step_log_probs(&mut g, &enc, &state, &allowed)?;
            out.push(g.value(lp).get(0, slot));
            state.advance(slot, &costs)?;
        }
        Ok(out)
    }

    /// Probability of every slot for the next pick after the given slot prefix
    /// (which must start with slot 0). `None` when nothing is feasible.
    pub fn next_distribution(
        &self,
        cs: &CandidateSet,
        prefix: &[usize],
        world: &World,
        tm: &TimeModel,
    ) -> Result<Option<Vec<f64>>> {
        let q = cs.query;
        let costs = SlotCosts::new(cs, world, tm)?;
        let mut state = DecoderState::new(&q, &costs)?;
        for &s in prefix.iter().skip(1) {
            state.advance(s, &costs)?;
        }
        let allowed = state.allowed();
        if !allowed.iter().any(|&a| a) {
            return Ok(None);
        }
        let mut g = Graph::new(&self.store);
        let enc = self.prepare(&mut g, &q, cs, world)?;
        let lp = self.step_log_probs(&mut g, &enc, &state, &allowed)?;
        Ok(Some(
            g.value(lp)
                .data()
                .iter()
                .zip(&allowed)
                .map(|(l, &a)| if a { l.exp() } else { 0.0 })
                .collect(),
        ))
    }
}
