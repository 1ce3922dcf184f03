//! End-to-end training on a planted synthetic city: discriminator
//! pre-training, supervised pre-training, then adversarial epochs with
//! policy-gradient and teacher-forcing updates. Compares the best checkpoint
//! with the popularity baseline and saves it.
//!
//! `RUST_LOG=info cargo run --release --example train_small [out_dir]`

use std::path::PathBuf;

use ant_trip::candidates::CandidateBuilder;
use ant_trip::cli::save_models;
use ant_trip::dataset::{generate_synthetic_world, SyntheticWorldConfig};
use ant_trip::evaluation::{evaluate, PopPlanner};
use ant_trip::training::{metrics_to_csv, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).map_or_else(
        || std::env::temp_dir().join("ant-train-small"),
        PathBuf::from,
    );
    let corpus = generate_synthetic_world(&SyntheticWorldConfig {
        n_pois: 100,
        n_categories: 20,
        transition_concentration: 20.0,
        rng_seed: 11,
        ..Default::default()
    })?;
    let cfg = TrainConfig {
        n_candidates: 50,
        lr_pretrain: 1e-3,
        lr_adv: 1e-4,
        pretrain_epochs: 5,
        adv_epochs: 2,
        batches_per_epoch: 10,
        val_limit: 100,
        ..Default::default()
    };
    let outcome = train(&corpus, &cfg)?;
    print!("{}", metrics_to_csv(&outcome.history));

    let builder = CandidateBuilder::new(&corpus.train_trips(), cfg.n_candidates);
    let model = evaluate(&outcome.best, &corpus, &corpus.split.test, &builder)?;
    let pop = evaluate(
        &PopPlanner::from_trips(corpus.n_pois(), &corpus.train_trips()),
        &corpus,
        &corpus.split.test,
        &builder,
    )?;
    println!(
        "test HR {:.4} OSP {:.4} (generator)",
        model.hr_mean, model.osp_mean
    );
    println!(
        "test HR {:.4} OSP {:.4} (popularity)",
        pop.hr_mean, pop.osp_mean
    );

    std::fs::create_dir_all(&out)?;
    let ckpt = out.join("best.ant");
    save_models(&ckpt, &outcome.best, &outcome.discriminator)?;
    println!("saved {}", ckpt.display());
    Ok(())
}
