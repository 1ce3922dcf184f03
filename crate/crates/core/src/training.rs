//! Training: supervised pre-training from real trips, discriminator
//! pre-training, then alternating discriminator updates, policy-gradient
//! generator updates rewarded by the discriminator, and supervised
//! "teacher" updates.
//!
//! Every batch is processed item by item. The coordinator draws one seed per
//! item before the batch starts and reduces results in item order, so a run
//! is reproducible for any number of worker threads.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateBuilder, CandidateSet, SlotCosts};
use crate::dataset::Corpus;
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::generator::{DecodeMode, DecoderState, Generator, GeneratorConfig, Rollout, Vocab};
use crate::geo::{Trip, World};
use crate::nn::{AdamConfig, Gradients, Graph};

/// Every knob of a training run. Parsed from flat `key = value` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub adv_epochs: usize,
    pub batches_per_epoch: usize,
    pub disc_pretrain_epochs: usize,
    pub lr_pretrain: f64,
    pub lr_adv: f64,
    pub lr_disc: f64,
    pub baseline_decay: f64,
    pub baseline_enabled: bool,
    pub teacher_forcing: bool,
    /// Condition supervised steps on the model's own sampled prefix instead
    /// of the real one.
    pub sample_prefix: bool,
    pub rng_seed: u64,
    pub n_candidates: usize,
    /// Training queries get `trip_time(real) * budget_slack` as budget.
    pub budget_slack: f64,
    /// Validation trips used per evaluation; 0 means all.
    pub val_limit: usize,
    /// Fill the `seconds` metrics column. Off by default so metrics files
    /// are reproducible byte for byte.
    pub record_timing: bool,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_inner: usize,
    pub poi_dim: usize,
    pub category_dim: usize,
    pub user_dim: usize,
    pub max_len: usize,
    pub disc_embed_dim: usize,
    pub disc_hidden: usize,
    pub disc_head_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        let d = DiscriminatorConfig::default();
        Self {
            batch_size: 32,
            pretrain_epochs: 10,
            adv_epochs: 5,
            batches_per_epoch: 20,
            disc_pretrain_epochs: 3,
            lr_pretrain: 1e-4,
            lr_adv: 1e-5,
            lr_disc: 1e-4,
            baseline_decay: 0.9,
            baseline_enabled: true,
            teacher_forcing: true,
            sample_prefix: true,
            rng_seed: 0,
            n_candidates: 200,
            budget_slack: 1.05,
            val_limit: 0,
            record_timing: false,
            d_model: g.d_model,
            heads: g.heads,
            layers: g.layers,
            ffn_inner: g.ffn_inner,
            poi_dim: g.poi_dim,
            category_dim: g.category_dim,
            user_dim: g.user_dim,
            max_len: g.max_len,
            disc_embed_dim: d.embed_dim,
            disc_hidden: d.hidden,
            disc_head_hidden: d.head_hidden,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_pretrain > 0.0 && self.lr_adv > 0.0 && self.lr_disc > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("baseline_decay must lie in [0, 1)");
        }
        if !(self.budget_slack >= 1.0) {
            return bad("budget_slack must be at least 1");
        }
        if self.n_candidates < 2 {
            return bad("n_candidates must be at least 2");
        }
        self.generator_config().validate()
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            ffn_inner: self.ffn_inner,
            poi_dim: self.poi_dim,
            category_dim: self.category_dim,
            user_dim: self.user_dim,
            max_len: self.max_len,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            embed_dim: self.disc_embed_dim,
            hidden: self.disc_hidden,
            head_hidden: self.disc_head_hidden,
        }
    }
}

/// Exponential moving average of rewards. Reads as 0 until the first update,
/// which sets it to that batch's mean reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBaseline {
    pub ema: Option<f64>,
    pub decay: f64,
    pub enabled: bool,
}

impl RewardBaseline {
    pub fn new(decay: f64, enabled: bool) -> Self {
        Self {
            ema: None,
            decay,
            enabled,
        }
    }

    pub fn value(&self) -> f64 {
        if self.enabled {
            self.ema.unwrap_or(0.0)
        } else {
            0.0
        }
    }

    pub fn update(&mut self, mean_reward: f64) {
        self.ema = Some(match self.ema {
            Some(b) => self.decay * b + (1.0 - self.decay) * mean_reward,
            None => mean_reward,
        });
    }
}

/// How the decoder's prefix is chosen during a supervised pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefixPolicy {
    /// Advance with a POI sampled from the model's own distribution.
    Sampled,
    /// Advance with the real next POI.
    Teacher,
}

/// Negative log-likelihood of a real trip's steps, recorded on a graph.
pub struct SupervisedLoss {
    /// `None` when no step of the real trip was scorable.
    pub loss: Option<crate::nn::Var>,
    pub value: f64,
    pub terms: usize,
}

/// Sums `-log p(real_t | prefix)` over the real trip's steps. Steps whose
/// real POI is already visited or no longer fits under the current prefix are
/// skipped. `target` holds candidate slots and starts with slot 0.
#[allow(clippy::too_many_arguments)]
pub fn supervised_loss<R: Rng + ?Sized>(
    gen: &Generator,
    g: &mut Graph,
    cs: &CandidateSet,
    costs: &SlotCosts,
    target: &[usize],
    world: &World,
    prefix: PrefixPolicy,
    rng: &mut R,
) -> Result<SupervisedLoss> {
    let q = cs.query;
    let enc = gen.prepare(g, &q, cs, world)?;
    let mut state = DecoderState::new(&q, costs)?;
    let mut picked = Vec::new();
    for &want in &target[1..] {
        if state.step() >= gen.cfg.max_len {
            break;
        }
        let allowed = state.allowed();
        if !allowed.iter().any(|&a| a) {
            break;
        }
        let lp = gen.step_log_probs(g, &enc, &state, &allowed)?;
        let ok = allowed[want];
        if ok {
            picked.push(g.pick(lp, 0, want)?);
        }
        let next = match prefix {
            PrefixPolicy::Teacher if ok => want,
            PrefixPolicy::Teacher => break,
            PrefixPolicy::Sampled => sample_slot(g.value(lp).data(), &allowed, rng),
        };
        state.advance(next, costs)?;
    }
    if picked.is_empty() {
        return Ok(SupervisedLoss {
            loss: None,
            value: 0.0,
            terms: 0,
        });
    }
    let row = if picked.len() == 1 {
        picked[0]
    } else {
        g.concat_cols(&picked)?
    };
    let total = g.sum(row)?;
    let loss = g.scale(total, -1.0)?;
    Ok(SupervisedLoss {
        value: g.scalar(loss),
        loss: Some(loss),
        terms: picked.len(),
    })
}

fn sample_slot<R: Rng + ?Sized>(log_probs: &[f64], allowed: &[bool], rng: &mut R) -> usize {
    let mut u: f64 = rng.gen();
    let mut last = 0;
    for (s, &a) in allowed.iter().enumerate() {
        if !a {
            continue;
        }
        last = s;
        let p = log_probs[s].exp();
        if u < p {
            return s;
        }
        u -= p;
    }
    last
}

/// One REINFORCE sample: a sampled rollout, its reward, and the gradient of
/// the surrogate `-(reward - baseline) * log p(rollout)`.
pub struct ReinforceSample {
    pub rollout: Rollout,
    pub reward: f64,
    /// `None` when the rollout made no choice (start only).
    pub grads: Option<Gradients>,
}

#[allow(clippy::too_many_arguments)]
pub fn reinforce_sample<R: Rng + ?Sized>(
    gen: &Generator,
    cs: &CandidateSet,
    costs: &SlotCosts,
    world: &World,
    reward: &dyn Fn(&Trip) -> Result<f64>,
    baseline: f64,
    rng: &mut R,
) -> Result<ReinforceSample> {
    let q = cs.query;
    let mut g = Graph::new(&gen.store);
    let enc = gen.prepare(&mut g, &q, cs, world)?;
    let trace = gen.decode(&mut g, &enc, &q, costs, DecodeMode::Sample, rng)?;
    let rollout = trace.to_rollout(&g, cs)?;
    let r = reward(&rollout.trip)?;
    let grads = if trace.log_probs.is_empty() {
        None
    } else {
        let row = if trace.log_probs.len() == 1 {
            trace.log_probs[0]
        } else {
            g.concat_cols(&trace.log_probs)?
        };
        let logp = g.sum(row)?;
        let surrogate = g.scale(logp, -(r - baseline))?;
        Some(g.backward(surrogate)?)
    };
    Ok(ReinforceSample {
        rollout,
        reward: r,
        grads,
    })
}

/// One row of the metrics history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub phase: String,
    pub loss: Option<f64>,
    pub mean_reward: Option<f64>,
    pub val_hr: Option<f64>,
    pub val_osp: Option<f64>,
    pub seconds: Option<f64>,
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("epoch,phase,loss,mean_reward,val_hr,val_osp,seconds\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.phase,
            opt(r.loss),
            opt(r.mean_reward),
            opt(r.val_hr),
            opt(r.val_osp),
            r.seconds.map(|x| format!("{x:.3}")).unwrap_or_default()
        );
    }
    s
}

pub struct TrainOutcome {
    /// Generator with the best validation hit ratio seen.
    pub best: Generator,
    pub last: Generator,
    pub discriminator: Discriminator,
    pub history: Vec<MetricsRow>,
    pub best_val_hr: f64,
}

/// Per-item result reduced by the coordinator.
#[derive(Default)]
struct ItemOut {
    grads: Option<Gradients>,
    loss: f64,
    terms: usize,
    reward: f64,
    trip: Option<Trip>,
}

/// Sums gradients in item order, then scales by `1 / items.len()`.
fn reduce_grads(items: &[ItemOut], n_params: usize) -> Gradients {
    let mut total = Gradients::empty(n_params);
    for it in items {
        if let Some(g) = &it.grads {
            total.merge(g);
        }
    }
    total.scale(1.0 / items.len().max(1) as f64);
    total
}

fn apply(
    store: &mut crate::nn::ParamStore,
    grads: &Gradients,
    lr: f64,
    context: &str,
) -> Result<()> {
    store.zero_grad();
    store.accumulate(grads);
    store.adam_step(&AdamConfig::with_lr(lr));
    store.ensure_finite(context)
}

/// Shared state of a training run.
pub struct Trainer<'c> {
    pub corpus: &'c Corpus,
    pub cfg: TrainConfig,
    pub builder: CandidateBuilder,
    pub gen: Generator,
    pub disc: Discriminator,
    pub baseline: RewardBaseline,
    pub history: Vec<MetricsRow>,
    best: Option<(f64, Generator)>,
    rng: ChaCha8Rng,
    train_trips: Vec<Trip>,
}

impl<'c> Trainer<'c> {
    pub fn new(corpus: &'c Corpus, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if corpus.split.train.is_empty() {
            return Err(Error::invalid("training split is empty"));
        }
        let train_trips = corpus.train_trips();
        let builder = CandidateBuilder::new(&train_trips, cfg.n_candidates);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let vocab = Vocab {
            n_pois: corpus.n_pois(),
            n_categories: corpus.n_categories(),
            n_users: corpus.n_users,
        };
        let gen = Generator::new(cfg.generator_config(), vocab, &mut rng)?;
        let disc = Discriminator::new(cfg.discriminator_config(), corpus.n_pois(), &mut rng);
        Ok(Self {
            corpus,
            baseline: RewardBaseline::new(cfg.baseline_decay, cfg.baseline_enabled),
            cfg,
            builder,
            gen,
            disc,
            history: Vec::new(),
            best: None,
            rng,
            train_trips,
        })
    }

    fn seeds(&mut self, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.rng.gen()).collect()
    }

    fn random_batch(&mut self) -> Vec<Trip> {
        let n = self.cfg.batch_size.min(self.train_trips.len());
        self.train_trips
            .choose_multiple(&mut self.rng, n)
            .cloned()
            .collect()
    }

    fn shuffled_batches(&mut self) -> Vec<Vec<Trip>> {
        let mut order = self.train_trips.clone();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.cfg.batch_size)
            .map(|c| c.to_vec())
            .collect()
    }

    fn supervised_item(&self, trip: &Trip, seed: u64) -> Result<ItemOut> {
        let corpus = self.corpus;
        let q = corpus.query_for(trip, self.cfg.budget_slack)?;
        let cs = self.builder.build_for_training(&q, trip, &corpus.world)?;
        let costs = SlotCosts::new(&cs, &corpus.world, &corpus.time_model)?;
        let target: Vec<usize> = trip
            .pois
            .iter()
            .map(|&p| cs.slot_of(p).ok_or(Error::MissingTarget(p)))
            .collect::<Result<_>>()?;
        let mut g = Graph::new(&self.gen.store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prefix = self.prefix_policy();
        let out = supervised_loss(
            &self.gen,
            &mut g,
            &cs,
            &costs,
            &target,
            &corpus.world,
            prefix,
            &mut rng,
        )?;
        let grads = match out.loss {
            Some(l) => Some(g.backward(l)?),
            None => None,
        };
        Ok(ItemOut {
            grads,
            loss: out.value,
            terms: out.terms,
            ..Default::default()
        })
    }

    /// Mean supervised loss per scored step over `trips`, without updating
    /// anything. Per-trip seeds derive from `seed`, so repeated calls agree
    /// exactly.
    pub fn supervised_eval(&self, trips: &[Trip], seed: u64) -> Result<f64> {
        let items: Vec<(f64, usize)> = trips
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let corpus = self.corpus;
                let q = corpus.query_for(t, self.cfg.budget_slack)?;
                let cs = self.builder.build_for_training(&q, t, &corpus.world)?;
                let costs = SlotCosts::new(&cs, &corpus.world, &corpus.time_model)?;
                let target: Vec<usize> = t
                    .pois
                    .iter()
                    .map(|&p| cs.slot_of(p).ok_or(Error::MissingTarget(p)))
                    .collect::<Result<_>>()?;
                let mut g = Graph::new(&self.gen.store);
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                let out = supervised_loss(
                    &self.gen,
                    &mut g,
                    &cs,
                    &costs,
                    &target,
                    &corpus.world,
                    self.prefix_policy(),
                    &mut rng,
                )?;
                Ok((out.value, out.terms))
            })
            .collect::<Result<_>>()?;
        let terms: usize = items.iter().map(|i| i.1).sum();
        let loss: f64 = items.iter().map(|i| i.0).sum();
        Ok(if terms == 0 { 0.0 } else { loss / terms as f64 })
    }

    fn prefix_policy(&self) -> PrefixPolicy {
        if self.cfg.sample_prefix {
            PrefixPolicy::Sampled
        } else {
            PrefixPolicy::Teacher
        }
    }

    /// One supervised update on `batch`; returns the mean loss per scored step.
    pub fn supervised_step(&mut self, batch: &[Trip], lr: f64) -> Result<f64> {
        let seeds = self.seeds(batch.len());
        let items: Vec<ItemOut> = batch
            .par_iter()
            .zip(seeds)
            .map(|(t, s)| self.supervised_item(t, s))
            .collect::<Result<_>>()?;
        let grads = reduce_grads(&items, self.gen.store.len());
        apply(&mut self.gen.store, &grads, lr, "supervised step")?;
        let terms: usize = items.iter().map(|i| i.terms).sum();
        let loss: f64 = items.iter().map(|i| i.loss).sum();
        Ok(if terms == 0 { 0.0 } else { loss / terms as f64 })
    }

    fn rollout_item(&self, trip: &Trip, seed: u64, with_grad: bool) -> Result<ItemOut> {
        let corpus = self.corpus;
        let q = corpus.query_for(trip, self.cfg.budget_slack)?;
        let cs = self.builder.build(&q, &corpus.world)?;
        let costs = SlotCosts::new(&cs, &corpus.world, &corpus.time_model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if !with_grad {
            let mut g = Graph::new(&self.gen.store);
            let enc = self.gen.prepare(&mut g, &q, &cs, &corpus.world)?;
            let trace = self
                .gen
                .decode(&mut g, &enc, &q, &costs, DecodeMode::Sample, &mut rng)?;
            return Ok(ItemOut {
                trip: Some(trace.to_rollout(&g, &cs)?.trip),
                ..Default::default()
            });
        }
        let disc = &self.disc;
        let reward = |t: &Trip| disc.score_trip(t);
        let s = reinforce_sample(
            &self.gen,
            &cs,
            &costs,
            &corpus.world,
            &reward,
            self.baseline.value(),
            &mut rng,
        )?;
        Ok(ItemOut {
            grads: s.grads,
            reward: s.reward,
            trip: Some(s.rollout.trip),
            ..Default::default()
        })
    }

    /// Sampled generator trips for the queries of `batch`.
    pub fn generate_fakes(&mut self, batch: &[Trip]) -> Result<Vec<Trip>> {
        let seeds = self.seeds(batch.len());
        batch
            .par_iter()
            .zip(seeds)
            .map(|(t, s)| Ok(self.rollout_item(t, s, false)?.trip.expect("rollout trip")))
            .collect()
    }

    /// One policy-gradient update; returns the mean reward.
    pub fn policy_gradient_step(&mut self, batch: &[Trip]) -> Result<f64> {
        let seeds = self.seeds(batch.len());
        let items: Vec<ItemOut> = batch
            .par_iter()
            .zip(seeds)
            .map(|(t, s)| self.rollout_item(t, s, true))
            .collect::<Result<_>>()?;
        let grads = reduce_grads(&items, self.gen.store.len());
        apply(
            &mut self.gen.store,
            &grads,
            self.cfg.lr_adv,
            "policy-gradient step",
        )?;
        let mean = items.iter().map(|i| i.reward).sum::<f64>() / items.len() as f64;
        self.baseline.update(mean);
        Ok(mean)
    }

    /// One discriminator update on real trips against given fakes.
    pub fn discriminator_step(&mut self, real: &[Trip], fake: &[Trip]) -> Result<f64> {
        let mut g = Graph::new(&self.disc.store);
        let r: Vec<&Trip> = real.iter().collect();
        let f: Vec<&Trip> = fake.iter().collect();
        let loss = self.disc.loss(&mut g, &r, &f)?;
        let value = g.scalar(loss);
        let grads = g.backward(loss)?;
        drop(g);
        apply(
            &mut self.disc.store,
            &grads,
            self.cfg.lr_disc,
            "discriminator step",
        )?;
        Ok(value)
    }

    /// Generates fakes for the real batch, then updates the discriminator.
    pub fn update_discriminator(&mut self, real: &[Trip]) -> Result<f64> {
        let fakes = self.generate_fakes(real)?;
        self.discriminator_step(real, &fakes)
    }

    pub fn validate(&self) -> Result<(f64, f64)> {
        let val = &self.corpus.split.validation;
        let idx = if self.cfg.val_limit > 0 && val.len() > self.cfg.val_limit {
            &val[..self.cfg.val_limit]
        } else {
            &val[..]
        };
        if idx.is_empty() {
            return Ok((0.0, 0.0));
        }
        let report = evaluate(&self.gen, self.corpus, idx, &self.builder)?;
        Ok((report.hr_mean, report.osp_mean))
    }

    fn push_row(
        &mut self,
        epoch: usize,
        phase: &str,
        loss: Option<f64>,
        reward: Option<f64>,
        val: Option<(f64, f64)>,
        t0: Instant,
    ) {
        self.history.push(MetricsRow {
            epoch,
            phase: phase.to_string(),
            loss,
            mean_reward: reward,
            val_hr: val.map(|v| v.0),
            val_osp: val.map(|v| v.1),
            seconds: self.cfg.record_timing.then(|| t0.elapsed().as_secs_f64()),
        });
    }

    /// Validates the current generator, keeps it if it beats the best
    /// validation hit ratio so far, and returns `(hr, osp)`.
    fn checkpoint_best(&mut self) -> Result<(f64, f64)> {
        let v = self.validate()?;
        if self.best.as_ref().map_or(true, |b| v.0 > b.0) {
            self.best = Some((v.0, self.gen.clone()));
        }
        Ok(v)
    }

    /// Records the untrained model's validation scores as epoch 0.
    pub fn record_init(&mut self) -> Result<(f64, f64)> {
        let t0 = Instant::now();
        let v = self.checkpoint_best()?;
        self.push_row(0, "init", None, None, Some(v), t0);
        log::info!("init: val_hr={:.4} val_osp={:.4}", v.0, v.1);
        Ok(v)
    }

    /// Discriminator pre-training: every training trip against a rollout of
    /// the current generator, for `disc_pretrain_epochs` passes.
    pub fn pretrain_discriminator(&mut self) -> Result<()> {
        if self.cfg.disc_pretrain_epochs == 0 {
            return Ok(());
        }
        let all = self.train_trips.clone();
        let fakes = self.generate_fakes(&all)?;
        for epoch in 1..=self.cfg.disc_pretrain_epochs {
            let t0 = Instant::now();
            let mut order: Vec<usize> = (0..all.len()).collect();
            order.shuffle(&mut self.rng);
            let mut losses = Vec::new();
            for chunk in order.chunks(self.cfg.batch_size) {
                let real: Vec<Trip> = chunk.iter().map(|&i| all[i].clone()).collect();
                let fake: Vec<Trip> = chunk.iter().map(|&i| fakes[i].clone()).collect();
                losses.push(self.discriminator_step(&real, &fake)?);
            }
            let loss = losses.iter().sum::<f64>() / losses.len() as f64;
            log::info!("disc_pretrain {epoch}: loss={loss:.4}");
            self.push_row(epoch, "disc_pretrain", Some(loss), None, None, t0);
        }
        Ok(())
    }

    /// One pass of supervised pre-training over the shuffled training trips.
    /// Returns the mean batch loss.
    pub fn pretrain_epoch(&mut self, epoch: usize) -> Result<f64> {
        let t0 = Instant::now();
        let mut losses = Vec::new();
        for batch in self.shuffled_batches() {
            losses.push(self.supervised_step(&batch, self.cfg.lr_pretrain)?);
        }
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let v = self.checkpoint_best()?;
        log::info!(
            "pretrain {epoch}: loss={loss:.4} val_hr={:.4} val_osp={:.4}",
            v.0,
            v.1
        );
        self.push_row(epoch, "pretrain", Some(loss), None, Some(v), t0);
        Ok(loss)
    }

    /// `batches_per_epoch` rounds of discriminator update, policy-gradient
    /// update and (optionally) a supervised update. Returns the mean reward.
    pub fn adversarial_epoch(&mut self, epoch: usize) -> Result<f64> {
        let t0 = Instant::now();
        let mut rewards = Vec::new();
        let mut losses = Vec::new();
        for _ in 0..self.cfg.batches_per_epoch {
            let real = self.random_batch();
            self.update_discriminator(&real)?;
            let queries = self.random_batch();
            rewards.push(self.policy_gradient_step(&queries)?);
            if self.cfg.teacher_forcing {
                let batch = self.random_batch();
                losses.push(self.supervised_step(&batch, self.cfg.lr_adv)?);
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let v = self.checkpoint_best()?;
        let reward = mean(&rewards);
        log::info!(
            "adversarial {epoch}: reward={:.4} val_hr={:.4} val_osp={:.4}",
            reward.unwrap_or(0.0),
            v.0,
            v.1
        );
        self.push_row(epoch, "adversarial", mean(&losses), reward, Some(v), t0);
        Ok(reward.unwrap_or(0.0))
    }

    pub fn finish(self) -> TrainOutcome {
        let (best_val_hr, best) = self.best.unwrap_or_else(|| (0.0, self.gen.clone()));
        TrainOutcome {
            best,
            last: self.gen,
            discriminator: self.disc,
            history: self.history,
            best_val_hr,
        }
    }

    /// Runs the whole schedule: initial validation, discriminator
    /// pre-training, generator pre-training, then the adversarial epochs.
    pub fn run(mut self) -> Result<TrainOutcome> {
        self.record_init()?;
        self.pretrain_discriminator()?;
        for epoch in 1..=self.cfg.pretrain_epochs {
            self.pretrain_epoch(epoch)?;
        }
        for epoch in 1..=self.cfg.adv_epochs {
            self.adversarial_epoch(epoch)?;
        }
        Ok(self.finish())
    }
}

/// Builds a trainer and runs the full schedule.
pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(corpus, cfg.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_starts_at_zero_then_tracks() {
        let mut b = RewardBaseline::new(0.9, true);
        assert_eq!(b.value(), 0.0);
        b.update(0.4);
        assert_eq!(b.value(), 0.4);
        b.update(0.6);
        assert!((b.value() - 0.42).abs() < 1e-15);
        let mut off = RewardBaseline::new(0.9, false);
        off.update(0.7);
        assert_eq!(off.value(), 0.0);
    }

    #[test]
    fn config_round_trips_through_flat_text() {
        let cfg = TrainConfig {
            batch_size: 7,
            lr_adv: 3e-6,
            baseline_enabled: false,
            ..Default::default()
        };
        let text = cfg.to_toml();
        assert!(!text.contains('['), "flat format has no tables: {text}");
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
        assert!(TrainConfig::from_toml("batch_size = 4\nlr_pretrain = 0.001\n").is_ok());
        assert!(matches!(
            TrainConfig::from_toml("bogus = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            TrainConfig::from_toml("baseline_decay = 1.5"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn metrics_csv_leaves_missing_cells_empty() {
        let rows = vec![MetricsRow {
            epoch: 1,
            phase: "pretrain".into(),
            loss: Some(0.5),
            mean_reward: None,
            val_hr: Some(0.25),
            val_osp: Some(0.0),
            seconds: None,
        }];
        assert_eq!(
            metrics_to_csv(&rows),
            "epoch,phase,loss,mean_reward,val_hr,val_osp,seconds\n1,pretrain,0.5,,0.25,0,\n"
        );
    }
}
