//! Single-threaded recommendation latency across candidate-set sizes for a
//! freshly initialized desk-scale generator on a 500-POI synthetic city.
//!
//! `cargo run --release --example latency_bench [reps]`

use ant_trip::candidates::TripHypergraph;
use ant_trip::dataset::{generate_synthetic_world, SyntheticWorldConfig};
use ant_trip::evaluation::{bench_latency, bench_to_csv};
use ant_trip::generator::{Generator, GeneratorConfig, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ant_trip::Result<()> {
    let reps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(30);
    let corpus = generate_synthetic_world(&SyntheticWorldConfig {
        n_pois: 500,
        n_trips: 1000,
        ..Default::default()
    })?;
    let vocab = Vocab {
        n_pois: corpus.n_pois(),
        n_categories: corpus.n_categories(),
        n_users: corpus.n_users,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gen = Generator::new(GeneratorConfig::default(), vocab, &mut rng)?;
    let hypergraph = TripHypergraph::build(&corpus.train_trips());
    let rows = bench_latency(
        &gen,
        &corpus,
        &hypergraph,
        &[50, 100, 200, 400],
        reps,
        &mut rng,
    )?;
    print!("{}", bench_to_csv(&rows));
    let ratio = rows.last().unwrap().median_ms / rows[0].median_ms;
    println!("median(400) / median(50) = {ratio:.2}");
    Ok(())
}
