//! Hit ratio and order-aware precision on the test split for the popularity
//! baseline and an untrained generator, with a per-query report CSV.
//!
//! `cargo run --release --example evaluate_pop`

use ant_trip::candidates::CandidateBuilder;
use ant_trip::dataset::{generate_synthetic_world, SyntheticWorldConfig};
use ant_trip::evaluation::{evaluate, hit_ratio, osp, PopPlanner};
use ant_trip::generator::{Generator, GeneratorConfig, Vocab};
use ant_trip::geo::{PoiId, Trip, UserId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ant_trip::Result<()> {
    // The metrics on a hand-made pair first.
    let t = |p: &[u32]| Trip::new(UserId(0), p.iter().map(|&x| PoiId(x)).collect());
    let (rec, real) = (t(&[0, 2, 5, 1, 4])?, t(&[0, 1, 2, 3, 4])?);
    println!(
        "HR = {:.4}, OSP = {:.4} for 0-2-5-1-4 against 0-1-2-3-4",
        hit_ratio(&rec, &real)?,
        osp(&rec, &real)?
    );

    let corpus = generate_synthetic_world(&SyntheticWorldConfig::default())?;
    let train = corpus.train_trips();
    let builder = CandidateBuilder::new(&train, 100);
    let pop = PopPlanner::from_trips(corpus.n_pois(), &train);
    let vocab = Vocab {
        n_pois: corpus.n_pois(),
        n_categories: corpus.n_categories(),
        n_users: corpus.n_users,
    };
    let untrained = Generator::new(
        GeneratorConfig::default(),
        vocab,
        &mut ChaCha8Rng::seed_from_u64(1),
    )?;

    let pop_report = evaluate(&pop, &corpus, &corpus.split.test, &builder)?;
    let gen_report = evaluate(&untrained, &corpus, &corpus.split.test, &builder)?;
    for (name, r) in [
        ("popularity", &pop_report),
        ("untrained generator", &gen_report),
    ] {
        println!(
            "{name:20} HR {:.4}  OSP {:.4}  over {} queries",
            r.hr_mean, r.osp_mean, r.n_queries
        );
    }
    let path = std::env::temp_dir().join("ant-pop-report.csv");
    pop_report.write_csv(&path)?;
    println!("per-query popularity report in {}", path.display());
    Ok(())
}
