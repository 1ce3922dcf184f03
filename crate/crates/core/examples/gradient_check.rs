//! Compares reverse-mode gradients with central finite differences for the
//! discriminator loss and a small attention encoder layer.
//!
//! `cargo run --release --example gradient_check`

use ant_trip::discriminator::{Discriminator, DiscriminatorConfig};
use ant_trip::geo::{PoiId, Trip, UserId};
use ant_trip::nn::{EncoderLayer, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn max_rel_err(store: &mut ParamStore, loss: &dyn Fn(&mut Graph) -> Var) -> f64 {
    let h = 1e-5;
    let analytic = {
        let mut g = Graph::new(store);
        let l = loss(&mut g);
        g.backward(l).unwrap().flatten(store)
    };
    let eval = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let l = loss(&mut g);
        g.scalar(l)
    };
    let mut worst = 0.0f64;
    let mut k = 0;
    for id in store.ids().collect::<Vec<_>>() {
        let base = store.value(id).clone();
        for e in 0..base.len() {
            let mut t = base.clone();
            t.data_mut()[e] += h;
            store.set_value(id, t.clone()).unwrap();
            let up = eval(store);
            t.data_mut()[e] -= 2.0 * h;
            store.set_value(id, t).unwrap();
            let down = eval(store);
            store.set_value(id, base.clone()).unwrap();
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(
                (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6),
            );
            k += 1;
        }
    }
    worst
}

fn main() -> ant_trip::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trip = |p: &[u32]| Trip::new(UserId(0), p.iter().map(|&x| PoiId(x)).collect()).unwrap();
    let real = [trip(&[0, 1, 2]), trip(&[3, 4])];
    let fake = [trip(&[5, 1]), trip(&[2, 6, 7, 0])];
    let cfg = DiscriminatorConfig {
        embed_dim: 4,
        hidden: 5,
        head_hidden: 3,
    };
    let mut disc = Discriminator::new(cfg, 8, &mut rng);
    let shape = disc.clone();
    let err = max_rel_err(&mut disc.store, &|g| {
        shape
            .loss(
                g,
                &real.iter().collect::<Vec<_>>(),
                &fake.iter().collect::<Vec<_>>(),
            )
            .unwrap()
    });
    println!(
        "discriminator loss: {} parameters, max relative error {err:.2e}",
        shape.store.num_values()
    );

    let mut store = ParamStore::new();
    let layer = EncoderLayer::new(&mut store, "enc", 8, 2, 12, &mut rng)?;
    let x = Tensor::uniform(5, 8, 1.0, &mut rng);
    let weights = Tensor::uniform(5, 8, 1.0, &mut rng);
    let err = max_rel_err(&mut store, &|g| {
        let xv = g.constant(x.clone());
        let h = layer.forward(g, xv).unwrap();
        let w = g.constant(weights.clone());
        let p = g.mul(h, w).unwrap();
        g.sum(p).unwrap()
    });
    println!(
        "encoder layer: {} parameters, max relative error {err:.2e}",
        store.num_values()
    );
    Ok(())
}
