use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::candidates::{build_candidate_set, SlotCosts, TripHypergraph};
use crate::geo::{trip_time, CategoryId, Coords, Poi, PoiId, TimeModel, Trip, UserId};
use crate::nn::checkpoint::{decode as decode_blocks, encode as encode_blocks};

/// Ten POIs on a short east-west line, 300 s at each.
fn fixture() -> (World, TimeModel) {
    let pois = (0..10)
        .map(|i| Poi {
            id: PoiId(i),
            coords: Coords::new(0.0, i as f64 * 0.002).unwrap(),
            category: CategoryId(i % 3),
        })
        .collect();
    let tm = TimeModel::new(
        (0..10)
            .map(|i| (PoiId(i), 300.0))
            .collect::<HashMap<_, _>>(),
        2.0,
    )
    .unwrap();
    (World::new(pois).unwrap(), tm)
}

fn small_cfg() -> GeneratorConfig {
    GeneratorConfig {
        d_model: 8,
        heads: 2,
        layers: 1,
        ffn_inner: 8,
        poi_dim: 6,
        category_dim: 3,
        user_dim: 4,
        max_len: 20,
    }
}

fn model(seed: u64) -> Generator {
    let vocab = Vocab {
        n_pois: 10,
        n_categories: 3,
        n_users: 2,
    };
    Generator::new(small_cfg(), vocab, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn cands(start: u32, budget: f64, n: usize, world: &World) -> CandidateSet {
    let q = TripQuery::new(UserId(1), PoiId(start), budget).unwrap();
    build_candidate_set(&q, &TripHypergraph::default(), world, n).unwrap()
}

#[test]
fn initial_state_subtracts_start_duration() {
    let (world, tm) = fixture();
    let cs = cands(0, 5000.0, 6, &world);
    let costs = SlotCosts::new(&cs, &world, &tm).unwrap();
    let s = DecoderState::new(&cs.query, &costs).unwrap();
    assert_eq!(s.remaining_s(), 5000.0 - 300.0);
    assert_eq!(s.selected(), &[0]);
    assert_eq!(s.visited()[0], true);
}

#[test]
fn exact_fit_drains_remaining_to_zero() {
    let (world, tm) = fixture();
    let cs = cands(0, 10_000.0, 4, &world);
    let costs = SlotCosts::new(&cs, &world, &tm).unwrap();
    let probe = DecoderState::new(&cs.query, &costs).unwrap();
    let budget = 300.0 + probe.advance_cost(1);
    let q = TripQuery::new(UserId(1), PoiId(0), budget).unwrap();
    let mut s = DecoderState::new(&q, &costs).unwrap();
    s.advance(1, &costs).unwrap();
    assert_eq!(s.remaining_s(), 0.0);
    assert!(s.advance(1, &costs).is_err());
}

#[test]
fn budget_equal_to_start_duration_yields_start_only() {
    let (world, tm) = fixture();
    let gen = model(1);
    let cs = cands(3, 300.0, 5, &world);
    let r = gen
        .generate_trip(
            &cs,
            &world,
            &tm,
            DecodeMode::Greedy,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
    assert_eq!(r.trip.pois, vec![PoiId(3)]);
    assert!(r.step_log_probs.is_empty());
    assert_eq!(r.total_time_s, 300.0);
}

#[test]
fn budget_below_start_duration_is_infeasible() {
    let (world, tm) = fixture();
    let gen = model(1);
    let cs = cands(3, 299.0, 5, &world);
    let err = gen
        .generate_trip(
            &cs,
            &world,
            &tm,
            DecodeMode::Greedy,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
    assert!(err.to_string().contains("infeasible query"), "{err}");
}

#[test]
fn single_feasible_option_is_forced_in_both_modes() {
    let (world, mut tm) = fixture();
    // Make slot 2's POI too long to fit, so only slot 1 remains.
    let cs = cands(0, 10_000.0, 3, &world);
    let mut durations: HashMap<PoiId, f64> = tm.sorted_durations().into_iter().collect();
    durations.insert(cs.pois[2], 50_000.0);
    tm = TimeModel::new(durations, 2.0).unwrap();
    let gen = model(2);
    for mode in [DecodeMode::Greedy, DecodeMode::Sample] {
        let r = gen
            .generate_trip(&cs, &world, &tm, mode, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(r.trip.pois, vec![cs.pois[0], cs.pois[1]]);
        assert!(r.step_log_probs[0].abs() < 1e-12);
    }
}

#[test]
fn sampling_is_reproducible() {
    let (world, tm) = fixture();
    let gen = model(3);
    let cs = cands(4, 4000.0, 10, &world);
    let run = |seed| {
        gen.generate_trip(
            &cs,
            &world,
            &tm,
            DecodeMode::Sample,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    };
    let a = run(9);
    let b = run(9);
    assert_eq!(a.trip, b.trip);
    let bits = |r: &Rollout| {
        r.step_log_probs
            .iter()
            .map(|x| x.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn rollouts_are_feasible_and_replay_consistent() {
    let (world, tm) = fixture();
    let gen = model(4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for start in 0..10 {
        let cs = cands(start, 2500.0 + 300.0 * start as f64, 8, &world);
        let r = gen
            .generate_trip(&cs, &world, &tm, DecodeMode::Sample, &mut rng)
            .unwrap();
        assert_eq!(r.step_log_probs.len(), r.trip.len() - 1);
        let t = trip_time(&r.trip, &world, &tm).unwrap();
        assert_eq!(t, r.total_time_s);
        assert!(t <= cs.query.budget_s + crate::geo::TIME_EPS);
        let replay = gen.replay_log_probs(&cs, &r.trip, &world, &tm).unwrap();
        for (a, b) in replay.iter().zip(&r.step_log_probs) {
            assert!((a - b).abs() < 1e-10);
        }
        let product: f64 = r.step_probs().iter().product();
        assert!((r.log_prob().exp() - product).abs() < 1e-10);
    }
}

#[test]
fn masked_slots_get_zero_probability() {
    let (world, tm) = fixture();
    let gen = model(5);
    let cs = cands(0, 1500.0, 10, &world);
    let costs = SlotCosts::new(&cs, &world, &tm).unwrap();
    let state = DecoderState::new(&cs.query, &costs).unwrap();
    let p = gen
        .next_distribution(&cs, &[0], &world, &tm)
        .unwrap()
        .unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for (s, prob) in p.iter().enumerate() {
        if !state.is_allowed(s) {
            assert_eq!(*prob, 0.0);
        }
    }
    assert_eq!(p[0], 0.0);
}

#[test]
fn zero_tables_give_zero_embedding() {
    let (world, _) = fixture();
    let mut gen = model(6);
    let ids: Vec<_> = gen.store.ids().collect();
    for id in ids {
        let name = gen.store.get(id).name.clone();
        if name.ends_with("_table") || name == "input.bias" {
            let (r, c) = gen.store.value(id).shape();
            gen.store.set_value(id, Tensor::zeros(r, c)).unwrap();
        }
    }
    let cs = cands(2, 4000.0, 5, &world);
    let mut g = Graph::new(&gen.store);
    let h = gen.joint_embed(&mut g, &cs.query, &cs, &world).unwrap();
    assert!(g.value(h).data().iter().all(|&x| x == 0.0));
}

#[test]
fn joint_embedding_matches_concat_oracle() {
    let (world, _) = fixture();
    let gen = model(7);
    let cs = cands(5, 4000.0, 6, &world);
    let mut g = Graph::new(&gen.store);
    let h = gen.joint_embed(&mut g, &cs.query, &cs, &world).unwrap();
    let table = |n: &str| gen.store.value(gen.store.find(n).unwrap());
    let w = table("input.weight");
    let b = table("input.bias");
    for (i, &p) in cs.pois.iter().enumerate() {
        let mut x = table("poi_table").row(p.index()).to_vec();
        x.extend_from_slice(table("category_table").row(world.get(p).unwrap().category.index()));
        x.extend_from_slice(table("user_table").row(1));
        for c in 0..w.cols() {
            let mut acc = b.get(0, c);
            for (k, xv) in x.iter().enumerate() {
                acc += xv * w.get(k, c);
            }
            assert!((acc - g.value(h).get(i, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn single_allowed_candidate_glimpse_is_its_value_row() {
    let (world, _) = fixture();
    let gen = model(8);
    let cs = cands(0, 4000.0, 6, &world);
    let mut g = Graph::new(&gen.store);
    let enc = gen.prepare(&mut g, &cs.query, &cs, &world).unwrap();
    let ctx = g.constant(Tensor::filled(1, 2 * 8 + 1, 0.3));
    let mut allowed = vec![false; 6];
    allowed[4] = true;
    let out = gen.glimpse(&mut g, &enc, ctx, &allowed).unwrap();
    let v = g.value(enc.glimpse_v).row(4).to_vec();
    for (a, b) in g.value(out).data().iter().zip(&v) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn greedy_ties_pick_lowest_slot() {
    let lp = [crate::nn::MASK_SENTINEL, -0.7, -0.7, -2.0];
    let pick = super::decode::choose(
        &lp,
        &[false, true, true, true],
        DecodeMode::Greedy,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    assert_eq!(pick, 1);
}

#[test]
fn checkpoint_round_trip() {
    let (world, tm) = fixture();
    let gen = model(9);
    let bytes = encode_blocks(&gen.to_blocks());
    let back = Generator::from_blocks(&decode_blocks(&bytes).unwrap()).unwrap();
    assert_eq!(back.store.flatten(), gen.store.flatten());
    let cs = cands(1, 3000.0, 7, &world);
    let a = gen
        .generate_trip(
            &cs,
            &world,
            &tm,
            DecodeMode::Greedy,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
    let b = back
        .generate_trip(
            &cs,
            &world,
            &tm,
            DecodeMode::Greedy,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn unknown_user_is_rejected() {
    let (world, tm) = fixture();
    let gen = model(10);
    let mut cs = cands(1, 3000.0, 5, &world);
    cs.query.user = UserId(7);
    let err = gen
        .generate_trip(
            &cs,
            &world,
            &tm,
            DecodeMode::Greedy,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
    assert!(matches!(err, Error::UnknownId { kind: "user", .. }));
}

#[test]
fn advances_reproduce_trip_time() {
    let (world, tm) = fixture();
    let cs = cands(2, 1e6, 10, &world);
    let costs = SlotCosts::new(&cs, &world, &tm).unwrap();
    let mut s = DecoderState::new(&cs.query, &costs).unwrap();
    for slot in [3, 1, 7, 5] {
        s.advance(slot, &costs).unwrap();
    }
    let trip = Trip::new(
        UserId(1),
        s.selected().iter().map(|&i| cs.pois[i]).collect(),
    )
    .unwrap();
    assert_eq!(s.used_s(), trip_time(&trip, &world, &tm).unwrap());
}
