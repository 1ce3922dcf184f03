//! Binary classifier scoring how much a trip looks like a real one: a GRU
//! over POI embeddings followed by a two-layer head over `{fake, real}`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Trip;
use crate::nn::checkpoint::{restore_store, store_blocks, take_block, Block};
use crate::nn::layers::init_uniform;
use crate::nn::{Graph, GruCell, Linear, ParamId, ParamStore, Tensor, Var};

pub const FAKE: usize = 0;
pub const REAL: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub head_hidden: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden: 64,
            head_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub n_pois: usize,
    pub store: ParamStore,
    poi_table: ParamId,
    gru: GruCell,
    head1: Linear,
    head2: Linear,
}

const META_BLOCK: &str = "discriminator.meta";
const PREFIX: &str = "discriminator.";

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(cfg: DiscriminatorConfig, n_pois: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let poi_table = store.add(
            "poi_table",
            init_uniform(n_pois, cfg.embed_dim, cfg.embed_dim, rng),
        );
        let gru = GruCell::new(&mut store, "gru", cfg.embed_dim, cfg.hidden, rng);
        let head1 = Linear::new(&mut store, "head1", cfg.hidden, cfg.head_hidden, true, rng);
        let head2 = Linear::new(&mut store, "head2", cfg.head_hidden, 2, true, rng);
        Self {
            cfg,
            n_pois,
            store,
            poi_table,
            gru,
            head1,
            head2,
        }
    }

    /// Row-wise log-probabilities over `{fake, real}` (`B x 2`) for a batch of
    /// trips of any lengths. Shorter trips are padded; padded steps leave the
    /// hidden state untouched.
    pub fn log_probs(&self, g: &mut Graph, trips: &[&Trip]) -> Result<Var> {
        if trips.is_empty() {
            return Err(Error::invalid("empty trip batch"));
        }
        for t in trips {
            if let Some(&p) = t.pois.iter().find(|p| p.index() >= self.n_pois) {
                return Err(Error::UnknownId {
                    kind: "POI",
                    id: p.0,
                    len: self.n_pois,
                });
            }
        }
        let b = trips.len();
        let longest = trips.iter().map(|t| t.len()).max().unwrap_or(0);
        let table = g.param(self.poi_table);
        let mut h = g.constant(Tensor::zeros(b, self.cfg.hidden));
        for step in 0..longest {
            let ids: Vec<usize> = trips
                .iter()
                .map(|t| t.pois.get(step).map_or(0, |p| p.index()))
                .collect();
            let x = g.gather_rows(table, &ids)?;
            let next = self.gru.forward(g, x, h)?;
            h = if trips.iter().all(|t| step < t.len()) {
                next
            } else {
                let mut keep = Tensor::zeros(b, self.cfg.hidden);
                for (r, t) in trips.iter().enumerate() {
                    if step < t.len() {
                        keep.row_mut(r).fill(1.0);
                    }
                }
                let m = g.constant(keep.clone());
                let not_m = g.constant(keep.map(|v| 1.0 - v));
                let a = g.mul(m, next)?;
                let c = g.mul(not_m, h)?;
                g.add(a, c)?
            };
        }
        let z = self.head1.forward(g, h)?;
        let z = g.relu(z)?;
        let logits = self.head2.forward(g, z)?;
        g.log_softmax(logits, None)
    }

    /// `D(S)`: probability that `trip` is real.
    pub fn score_trip(&self, trip: &Trip) -> Result<f64> {
        Ok(self.score_batch(&[trip])?[0])
    }

    pub fn score_batch(&self, trips: &[&Trip]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let lp = self.log_probs(&mut g, trips)?;
        let v = g.value(lp);
        Ok((0..trips.len()).map(|r| v.get(r, REAL).exp()).collect())
    }

    /// `-mean log D(real) - mean log(1 - D(fake))`.
    pub fn loss(&self, g: &mut Graph, real: &[&Trip], fake: &[&Trip]) -> Result<Var> {
        let term = |g: &mut Graph, trips: &[&Trip], class: usize| -> Result<Var> {
            let lp = self.log_probs(g, trips)?;
            let mut sel = Tensor::zeros(trips.len(), 2);
            for r in 0..trips.len() {
                sel.set(r, class, 1.0);
            }
            let sel = g.constant(sel);
            let picked = g.mul(lp, sel)?;
            let s = g.sum(picked)?;
            g.scale(s, -1.0 / trips.len() as f64)
        };
        let a = term(g, real, REAL)?;
        let b = term(g, fake, FAKE)?;
        g.add(a, b)
    }

    pub fn to_blocks(&self) -> Vec<Block> {
        let c = &self.cfg;
        let meta = [c.embed_dim, c.hidden, c.head_hidden, self.n_pois];
        let mut blocks = vec![Block::new(
            META_BLOCK,
            Tensor::row_vector(meta.iter().map(|&x| x as f64).collect()),
        )];
        blocks.extend(store_blocks(PREFIX, &self.store));
        blocks
    }

    pub fn from_blocks(blocks: &[Block]) -> Result<Self> {
        let meta = take_block(blocks, META_BLOCK)?;
        if meta.len() != 4 {
            return Err(Error::Checkpoint(format!(
                "{META_BLOCK} must hold 4 values"
            )));
        }
        let m: Vec<usize> = meta.data().iter().map(|&x| x as usize).collect();
        let cfg = DiscriminatorConfig {
            embed_dim: m[0],
            hidden: m[1],
            head_hidden: m[2],
        };
        let mut d = Self::new(cfg, m[3], &mut rand::rngs::mock::StepRng::new(0, 0));
        restore_store(PREFIX, blocks, &mut d.store)?;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{PoiId, UserId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trip(p: &[u32]) -> Trip {
        Trip::new(UserId(0), p.iter().map(|&x| PoiId(x)).collect()).unwrap()
    }

    fn small(seed: u64) -> Discriminator {
        let cfg = DiscriminatorConfig {
            embed_dim: 5,
            hidden: 4,
            head_hidden: 3,
        };
        Discriminator::new(cfg, 8, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn zero_head(d: &mut Discriminator) {
        for id in d.store.ids().collect::<Vec<_>>() {
            if d.store.get(id).name.starts_with("head2") {
                let (r, c) = d.store.value(id).shape();
                d.store.set_value(id, Tensor::zeros(r, c)).unwrap();
            }
        }
    }

    #[test]
    fn scores_are_probabilities() {
        let d = small(1);
        for t in [trip(&[0]), trip(&[1, 2, 3]), trip(&[7, 6, 5, 4, 3])] {
            let s = d.score_trip(&t).unwrap();
            assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn zero_head_scores_one_half_and_loss_is_two_ln_two() {
        let mut d = small(2);
        zero_head(&mut d);
        assert_eq!(d.score_trip(&trip(&[1, 2, 3])).unwrap(), 0.5);
        let real = [trip(&[1, 2]), trip(&[3, 4, 5])];
        let fake = [trip(&[6, 7, 0])];
        let mut g = Graph::new(&d.store);
        let l = d
            .loss(
                &mut g,
                &real.iter().collect::<Vec<_>>(),
                &fake.iter().collect::<Vec<_>>(),
            )
            .unwrap();
        assert!((g.scalar(l) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    /// Plain-loop GRU and head on a single trip.
    fn oracle(d: &Discriminator, t: &Trip) -> f64 {
        let v = |name: &str| d.store.value(d.store.find(name).unwrap()).clone();
        let affine = |x: &[f64], w: &Tensor, b: Option<&Tensor>| -> Vec<f64> {
            (0..w.cols())
                .map(|c| {
                    b.map_or(0.0, |b| b.get(0, c))
                        + x.iter()
                            .enumerate()
                            .map(|(k, xv)| xv * w.get(k, c))
                            .sum::<f64>()
                })
                .collect()
        };
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let table = v("poi_table");
        let mut h = vec![0.0; d.cfg.hidden];
        for p in &t.pois {
            let x = table.row(p.index()).to_vec();
            let gate = |w: &str, u: &str, hin: &[f64]| -> Vec<f64> {
                let a = affine(
                    &x,
                    &v(&format!("gru.{w}.weight")),
                    Some(&v(&format!("gru.{w}.bias"))),
                );
                let b = affine(hin, &v(&format!("gru.{u}.weight")), None);
                a.iter().zip(&b).map(|(a, b)| a + b).collect()
            };
            let z: Vec<f64> = gate("w_z", "u_z", &h).into_iter().map(sig).collect();
            let r: Vec<f64> = gate("w_r", "u_r", &h).into_iter().map(sig).collect();
            let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
            let cand: Vec<f64> = gate("w_h", "u_h", &rh).into_iter().map(f64::tanh).collect();
            h = (0..h.len())
                .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
                .collect();
        }
        let z: Vec<f64> = affine(&h, &v("head1.weight"), Some(&v("head1.bias")))
            .into_iter()
            .map(|x| x.max(0.0))
            .collect();
        let o = affine(&z, &v("head2.weight"), Some(&v("head2.bias")));
        1.0 / (1.0 + (o[FAKE] - o[REAL]).exp())
    }

    #[test]
    fn matches_stepwise_oracle() {
        let d = small(3);
        let t = trip(&[4, 1, 6]);
        assert!((d.score_trip(&t).unwrap() - oracle(&d, &t)).abs() < 1e-10);
    }

    #[test]
    fn padding_does_not_change_scores() {
        let d = small(4);
        let short = trip(&[2, 5]);
        let long = trip(&[1, 3, 6, 7, 0]);
        let batched = d.score_batch(&[&short, &long]).unwrap();
        assert!((batched[0] - d.score_trip(&short).unwrap()).abs() < 1e-12);
        assert!((batched[1] - d.score_trip(&long).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn loss_ignores_batch_order() {
        let d = small(5);
        let real = [trip(&[1, 2, 3]), trip(&[4, 5]), trip(&[6, 7, 0, 1])];
        let fake = [trip(&[3, 1]), trip(&[0, 5, 6])];
        let eval = |r: Vec<&Trip>, f: Vec<&Trip>| {
            let mut g = Graph::new(&d.store);
            let l = d.loss(&mut g, &r, &f).unwrap();
            g.scalar(l)
        };
        let a = eval(real.iter().collect(), fake.iter().collect());
        let b = eval(real.iter().rev().collect(), fake.iter().rev().collect());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn unknown_poi_is_rejected() {
        let d = small(6);
        assert!(matches!(
            d.score_trip(&trip(&[1, 9])),
            Err(Error::UnknownId { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let d = small(7);
        let back = Discriminator::from_blocks(&d.to_blocks()).unwrap();
        assert_eq!(back.store.flatten(), d.store.flatten());
        assert_eq!(back.cfg, d.cfg);
    }
}
