//! Fixtures and oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use ant_trip::generator::GeneratorConfig;
use ant_trip::geo::{CategoryId, Coords, Poi, PoiId, TimeModel, World};
use ant_trip::nn::{Graph, ParamStore, Var};
use rand::Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors, per unit of loss magnitude.
/// Central differences carry roundoff near `eps * |L| / FD_STEP`, about
/// `2e-11 |L|`, so gradients below this floor are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Largest relative error between the tape gradient of `loss` and central
/// finite differences over every value in `store`.
pub fn fd_max_rel_err(store: &mut ParamStore, loss: &dyn Fn(&mut Graph) -> Var) -> f64 {
    let (analytic, floor) = {
        let mut g = Graph::new(store);
        let l = loss(&mut g);
        let floor = REL_FLOOR * g.scalar(l).abs().max(1.0);
        (g.backward(l).unwrap().flatten(store), floor)
    };
    let eval = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let l = loss(&mut g);
        g.scalar(l)
    };
    let ids: Vec<_> = store.ids().collect();
    let mut k = 0;
    let mut worst = 0.0f64;
    for id in ids {
        let base = store.value(id).clone();
        for e in 0..base.len() {
            let mut t = base.clone();
            t.data_mut()[e] = base.data()[e] + FD_STEP;
            store.set_value(id, t.clone()).unwrap();
            let up = eval(store);
            t.data_mut()[e] = base.data()[e] - FD_STEP;
            store.set_value(id, t).unwrap();
            let down = eval(store);
            store.set_value(id, base.clone()).unwrap();
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[k];
            k += 1;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

/// `n` POIs scattered over roughly 1.5 km, `cats` categories, random stays.
pub fn random_world<R: Rng + ?Sized>(n: usize, cats: u32, rng: &mut R) -> (World, TimeModel) {
    let pois: Vec<Poi> = (0..n as u32)
        .map(|i| Poi {
            id: PoiId(i),
            coords: Coords::new(
                40.75 + rng.gen_range(-0.007..0.007),
                -73.98 + rng.gen_range(-0.009..0.009),
            )
            .unwrap(),
            category: CategoryId(i % cats),
        })
        .collect();
    let durations: HashMap<PoiId, f64> = (0..n as u32)
        .map(|i| (PoiId(i), rng.gen_range(300.0..1800.0)))
        .collect();
    (
        World::new(pois).unwrap(),
        TimeModel::new(durations, 2.0).unwrap(),
    )
}

pub fn tiny_generator_config() -> GeneratorConfig {
    GeneratorConfig {
        d_model: 8,
        heads: 2,
        layers: 2,
        ffn_inner: 6,
        poi_dim: 5,
        category_dim: 3,
        user_dim: 4,
        max_len: 20,
    }
}

/// Independent haversine on raw coordinates.
pub fn haversine_m(a: Coords, b: Coords) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6_371_000.0 * h.sqrt().asin()
}
