//! The time-aware trip generator: joint POI/category/user embedding, a
//! self-attention encoder over the candidate set, and a decoder that picks
//! one feasible POI at a time.

mod decode;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::error::{Error, Result};
use crate::geo::{TripQuery, World};
use crate::nn::checkpoint::{restore_store, store_blocks, take_block, Block};
use crate::nn::layers::init_uniform;
use crate::nn::{EncoderLayer, Graph, Linear, ParamId, ParamStore, Tensor, Var};

pub use decode::{DecodeMode, DecoderState, Rollout, Trace};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_inner: usize,
    pub poi_dim: usize,
    pub category_dim: usize,
    pub user_dim: usize,
    /// Upper bound on generated trip length, start included.
    pub max_len: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 2,
            ffn_inner: 64,
            poi_dim: 64,
            category_dim: 16,
            user_dim: 32,
            max_len: 20,
        }
    }
}

impl GeneratorConfig {
    /// The larger preset: width 256, 8 heads, 6 layers.
    pub fn full_scale() -> Self {
        Self {
            d_model: 256,
            heads: 8,
            layers: 6,
            ffn_inner: 256,
            poi_dim: 256,
            category_dim: 32,
            user_dim: 256,
            max_len: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.max_len == 0 || self.ffn_inner == 0 {
            return Err(Error::Config(
                "max_len and ffn_inner must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Sizes of the embedding tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub n_pois: usize,
    pub n_categories: usize,
    pub n_users: usize,
}

/// Per-candidate tensors shared by every decoding step of one query.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// Final encoder output, `N x d`.
    pub h: Var,
    pub mean: Var,
    pub glimpse_k: Var,
    pub glimpse_v: Var,
    pub pred_k: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    poi_table: ParamId,
    category_table: ParamId,
    user_table: ParamId,
    input: Linear,
    layers: Vec<EncoderLayer>,
    glimpse_q: ParamId,
    glimpse_k: ParamId,
    glimpse_v: ParamId,
    pred_q: ParamId,
    pred_k: ParamId,
}

const META_BLOCK: &str = "generator.meta";
const PREFIX: &str = "generator.";

impl Generator {
    pub fn new<R: Rng + ?Sized>(cfg: GeneratorConfig, vocab: Vocab, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut store = ParamStore::new();
        let poi_table = store.add(
            "poi_table",
            init_uniform(vocab.n_pois, cfg.poi_dim, cfg.poi_dim, rng),
        );
        let category_table = store.add(
            "category_table",
            init_uniform(vocab.n_categories, cfg.category_dim, cfg.category_dim, rng),
        );
        let user_table = store.add(
            "user_table",
            init_uniform(vocab.n_users, cfg.user_dim, cfg.user_dim, rng),
        );
        let input = Linear::new(
            &mut store,
            "input",
            cfg.poi_dim + cfg.category_dim + cfg.user_dim,
            d,
            true,
            rng,
        );
        let layers = (0..cfg.layers)
            .map(|i| {
                EncoderLayer::new(
                    &mut store,
                    &format!("encoder{i}"),
                    d,
                    cfg.heads,
                    cfg.ffn_inner,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let glimpse_q = store.add("glimpse.w_q", init_uniform(2 * d + 1, d, 2 * d + 1, rng));
        let glimpse_k = store.add("glimpse.w_k", init_uniform(d, d, d, rng));
        let glimpse_v = store.add("glimpse.w_v", init_uniform(d, d, d, rng));
        let pred_q = store.add("predict.w_q", init_uniform(d, d, d, rng));
        let pred_k = store.add("predict.w_k", init_uniform(d, d, d, rng));
        Ok(Self {
            cfg,
            vocab,
            store,
            poi_table,
            category_table,
            user_table,
            input,
            layers,
            glimpse_q,
            glimpse_k,
            glimpse_v,
            pred_q,
            pred_k,
        })
    }

    fn check_id(kind: &'static str, id: u32, len: usize) -> Result<usize> {
        if (id as usize) < len {
            Ok(id as usize)
        } else {
            Err(Error::UnknownId { kind, id, len })
        }
    }

    /// `[x_poi ; x_category ; x_user] W_I + b_I`, one row per candidate.
    pub fn joint_embed(
        &self,
        g: &mut Graph,
        q: &TripQuery,
        cs: &CandidateSet,
        world: &World,
    ) -> Result<Var> {
        let mut poi_ix = Vec::with_capacity(cs.len());
        let mut cat_ix = Vec::with_capacity(cs.len());
        for &p in &cs.pois {
            poi_ix.push(Self::check_id("POI", p.0, self.vocab.n_pois)?);
            let c = world.get(p)?.category;
            cat_ix.push(Self::check_id("category", c.0, self.vocab.n_categories)?);
        }
        let u = Self::check_id("user", q.user.0, self.vocab.n_users)?;
        let pt = g.param(self.poi_table);
        let ct = g.param(self.category_table);
        let ut = g.param(self.user_table);
        let xl = g.gather_rows(pt, &poi_ix)?;
        let xc = g.gather_rows(ct, &cat_ix)?;
        let xu = g.gather_rows(ut, &vec![u; cs.len()])?;
        let x = g.concat_cols(&[xl, xc, xu])?;
        self.input.forward(g, x)
    }

    /// Runs the encoder stack.
    pub fn encode(&self, g: &mut Graph, h0: Var) -> Result<Var> {
        self.layers
            .iter()
            .try_fold(h0, |h, layer| layer.forward(g, h))
    }

    /// Embeds and encodes a candidate set and precomputes the decoder's keys and values.
    pub fn prepare(
        &self,
        g: &mut Graph,
        q: &TripQuery,
        cs: &CandidateSet,
        world: &World,
    ) -> Result<Encoded> {
        let h0 = self.joint_embed(g, q, cs, world)?;
        let h = self.encode(g, h0)?;
        let mean = g.mean_rows(h)?;
        let wk = g.param(self.glimpse_k);
        let wv = g.param(self.glimpse_v);
        let pk = g.param(self.pred_k);
        Ok(Encoded {
            h,
            mean,
            glimpse_k: g.matmul(h, wk)?,
            glimpse_v: g.matmul(h, wv)?,
            pred_k: g.matmul(h, pk)?,
        })
    }

    /// Context `[mean(H) ; H[prev] ; remaining / budget]`, width `2d + 1`.
    pub fn context(&self, g: &mut Graph, enc: &Encoded, state: &DecoderState) -> Result<Var> {
        let prev = g.gather_rows(enc.h, &[state.last_slot()])?;
        let t = g.constant(Tensor::scalar(state.remaining_s() / state.budget_s()));
        g.concat_cols(&[enc.mean, prev, t])
    }

    /// Multi-head attention of the context over the allowed candidates.
    pub fn glimpse(&self, g: &mut Graph, enc: &Encoded, ctx: Var, allowed: &[bool]) -> Result<Var> {
        let d = self.cfg.d_model;
        let dh = d / self.cfg.heads;
        let wq = g.param(self.glimpse_q);
        let q = g.matmul(ctx, wq)?;
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for i in 0..self.cfg.heads {
            let qi = g.slice_cols(q, i * dh, dh)?;
            let ki = g.slice_cols(enc.glimpse_k, i * dh, dh)?;
            let vi = g.slice_cols(enc.glimpse_v, i * dh, dh)?;
            heads.push(crate::nn::scaled_dot_attention(
                g,
                qi,
                ki,
                vi,
                Some(allowed),
            )?);
        }
        if heads.len() == 1 {
            Ok(heads[0])
        } else {
            g.concat_cols(&heads)
        }
    }

    /// Single-head compatibility logits `q k_j / sqrt(d)`, unmasked.
    pub fn logits(&self, g: &mut Graph, enc: &Encoded, refined: Var) -> Result<Var> {
        let wq = g.param(self.pred_q);
        let q = g.matmul(refined, wq)?;
        let u = g.matmul_t(q, enc.pred_k)?;
        g.scale(u, 1.0 / (self.cfg.d_model as f64).sqrt())
    }

    /// Log-probabilities over candidate slots (`1 x N`) for the next pick.
    /// Disallowed slots hold the mask sentinel. Errors with
    /// [`Error::FullyMasked`] when nothing is allowed.
    pub fn step_log_probs(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        state: &DecoderState,
        allowed: &[bool],
    ) -> Result<Var> {
        let ctx = self.context(g, enc, state)?;
        let refined = self.glimpse(g, enc, ctx, allowed)?;
        let u = self.logits(g, enc, refined)?;
        g.log_softmax(u, Some(allowed))
    }

    pub fn to_blocks(&self) -> Vec<Block> {
        let c = &self.cfg;
        let v = &self.vocab;
        let meta = [
            c.d_model,
            c.heads,
            c.layers,
            c.ffn_inner,
            c.poi_dim,
            c.category_dim,
            c.user_dim,
            c.max_len,
            v.n_pois,
            v.n_categories,
            v.n_users,
        ];
        let mut blocks = vec![Block::new(
            META_BLOCK,
            Tensor::row_vector(meta.iter().map(|&x| x as f64).collect()),
        )];
        blocks.extend(store_blocks(PREFIX, &self.store));
        blocks
    }

    pub fn from_blocks(blocks: &[Block]) -> Result<Self> {
        let meta = take_block(blocks, META_BLOCK)?;
        if meta.len() != 11 {
            return Err(Error::Checkpoint(format!(
                "{META_BLOCK} must hold 11 values"
            )));
        }
        let m: Vec<usize> = meta.data().iter().map(|&x| x as usize).collect();
        let cfg = GeneratorConfig {
            d_model: m[0],
            heads: m[1],
            layers: m[2],
            ffn_inner: m[3],
            poi_dim: m[4],
            category_dim: m[5],
            user_dim: m[6],
            max_len: m[7],
        };
        let vocab = Vocab {
            n_pois: m[8],
            n_categories: m[9],
            n_users: m[10],
        };
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut gen = Self::new(cfg, vocab, &mut rng)?;
        restore_store(PREFIX, blocks, &mut gen.store)?;
        Ok(gen)
    }
}

#[cfg(test)]
mod tests;
