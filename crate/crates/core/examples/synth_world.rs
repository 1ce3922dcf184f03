//! Generates a synthetic city with planted category transitions and writes it
//! as a corpus directory that the `ant` binary and the other examples read.
//!
//! `cargo run --release --example synth_world [out_dir]`

use std::path::PathBuf;

use ant_trip::dataset::{
    generate_synthetic_world_with_transitions, load_corpus, save_corpus, SyntheticWorldConfig,
};

fn main() -> ant_trip::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("ant-synth"), PathBuf::from);
    let cfg = SyntheticWorldConfig {
        n_pois: 100,
        n_categories: 20,
        transition_concentration: 20.0,
        rng_seed: 11,
        ..Default::default()
    };
    let (corpus, transitions) = generate_synthetic_world_with_transitions(&cfg)?;
    save_corpus(&out, &corpus)?;
    assert_eq!(load_corpus(&out)?, corpus);

    let lens: Vec<usize> = corpus.trips.iter().map(|t| t.trip.len()).collect();
    println!("wrote {}", out.display());
    println!(
        "{} POIs, {} categories, {} users, {} trips (train {}, validation {}, test {})",
        corpus.n_pois(),
        corpus.n_categories(),
        corpus.n_users,
        corpus.trips.len(),
        corpus.split.train.len(),
        corpus.split.validation.len(),
        corpus.split.test.len()
    );
    println!(
        "trip length {}..{}, mean {:.2}",
        lens.iter().min().unwrap(),
        lens.iter().max().unwrap(),
        lens.iter().sum::<usize>() as f64 / lens.len() as f64
    );
    for (c, row) in transitions.iter().take(5).enumerate() {
        let (next, p) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        println!("category {c:2} -> most likely {next:2} (p = {p:.3})");
    }
    let first = &corpus.trips[corpus.split.train[0]];
    println!(
        "first training trip: {:?}, {:.0} s of {:.0} s budget",
        first.trip.pois.iter().map(|p| p.0).collect::<Vec<_>>(),
        corpus.trip_time(&first.trip)?,
        first.budget_s
    );
    Ok(())
}
