//! Answers one trip query with greedy and sampled decoding and shows the
//! per-step probabilities and the time used against the budget.
//!
//! `cargo run --release --example recommend_trip [checkpoint.ant]`
//!
//! The checkpoint must come from a model trained on the same synthetic city
//! (for instance the one `train_small` saves). Without one, a model is
//! pre-trained for two quick epochs first.

use ant_trip::candidates::CandidateBuilder;
use ant_trip::cli::load_generator;
use ant_trip::dataset::{generate_synthetic_world, SyntheticWorldConfig};
use ant_trip::generator::{DecodeMode, Generator};
use ant_trip::training::{TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ant_trip::Result<()> {
    let corpus = generate_synthetic_world(&SyntheticWorldConfig {
        n_pois: 100,
        n_categories: 20,
        transition_concentration: 20.0,
        rng_seed: 11,
        ..Default::default()
    })?;
    let gen: Generator = match std::env::args().nth(1) {
        Some(path) => load_generator(path.as_ref())?,
        None => {
            let cfg = TrainConfig {
                n_candidates: 50,
                lr_pretrain: 1e-3,
                val_limit: 50,
                ..Default::default()
            };
            let mut t = Trainer::new(&corpus, cfg)?;
            for epoch in 1..=2 {
                let loss = t.pretrain_epoch(epoch)?;
                println!("pre-training epoch {epoch}: loss {loss:.3}");
            }
            t.gen
        }
    };

    let real = &corpus.trips[corpus.split.test[3]].trip;
    let q = corpus.query_for(real, 1.0)?;
    let cs = CandidateBuilder::new(&corpus.train_trips(), 50).build(&q, &corpus.world)?;
    println!(
        "query: user {} from POI {} with {:.0} s",
        q.user, q.start, q.budget_s
    );
    println!(
        "real trip:  {:?}",
        real.pois.iter().map(|p| p.0).collect::<Vec<_>>()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (name, mode, runs) in [
        ("greedy", DecodeMode::Greedy, 1),
        ("sampled", DecodeMode::Sample, 3),
    ] {
        for _ in 0..runs {
            let r = gen.generate_trip(&cs, &corpus.world, &corpus.time_model, mode, &mut rng)?;
            let probs: Vec<String> = r.step_probs().iter().map(|p| format!("{p:.2}")).collect();
            println!(
                "{name:8}    {:?}  p = [{}]  {:.0} s used",
                r.trip.pois.iter().map(|p| p.0).collect::<Vec<_>>(),
                probs.join(", "),
                r.total_time_s
            );
        }
    }
    Ok(())
}
