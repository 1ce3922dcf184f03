use std::path::Path;
use std::process::{Command, Output};

use ant_trip::dataset::load_corpus;
use ant_trip::geo::PoiId;

fn ant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ant"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SHORT_TRAIN: &str = "n_candidates = 30\nbatch_size = 8\npretrain_epochs = 1\nadv_epochs = 1\n\
batches_per_epoch = 2\ndisc_pretrain_epochs = 1\nval_limit = 20\nd_model = 16\nheads = 2\nlayers = 1\n\
ffn_inner = 16\npoi_dim = 8\ncategory_dim = 4\nuser_dim = 4\n";

/// Synthesizes a default world and trains a small model; returns (corpus, ckpt).
fn trained(dir: &Path) -> (String, String) {
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    let o = ant(&["--seed", "1", "synth", "--out", &p("corpus")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    std::fs::write(p("train.toml"), SHORT_TRAIN).unwrap();
    let o = ant(&[
        "--workers",
        "1",
        "train",
        "--corpus",
        &p("corpus"),
        "--config",
        &p("train.toml"),
        "--out",
        &p("run"),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    (p("corpus"), p("run/best.ant"))
}

#[test]
fn synth_train_evaluate_recommend_bench() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = trained(dir.path());
    for f in ["config.toml", "best.ant", "last.ant", "metrics.csv"] {
        assert!(dir.path().join("run").join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,phase,loss,mean_reward,val_hr,val_osp,seconds"));

    let report = dir.path().join("report.csv").to_string_lossy().into_owned();
    let o = ant(&[
        "evaluate",
        "--corpus",
        &corpus,
        "--ckpt",
        &ckpt,
        "--candidates",
        "30",
        "--out",
        &report,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("query_id,hr,osp,latency_ms"));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary["hr_mean"].as_f64().unwrap() >= 0.0);

    let c = load_corpus(Path::new(&corpus)).unwrap();
    let start = c.trips[c.split.train[0]].trip.start();
    let budget = c.time_model.duration(start).unwrap() + 5400.0;
    let o = ant(&[
        "recommend",
        "--ckpt",
        &ckpt,
        "--corpus",
        &corpus,
        "--user",
        "0",
        "--start",
        &start.0.to_string(),
        "--budget",
        &budget.to_string(),
        "--candidates",
        "30",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rec: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let seq = rec["poi_sequence"].as_array().unwrap();
    assert_eq!(seq[0].as_u64(), Some(start.0 as u64));
    assert_eq!(
        rec["per_step_probabilities"].as_array().unwrap().len(),
        seq.len() - 1
    );
    assert!(rec["total_time_s"].as_f64().unwrap() <= budget);

    let o = ant(&[
        "bench", "--ckpt", &ckpt, "--corpus", &corpus, "--sizes", "10,20", "--reps", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 3);

    let o = ant(&[
        "evaluate",
        "--corpus",
        &corpus,
        "--pop",
        "--split",
        "validation",
        "--out",
        &report,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn infeasible_recommendation_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = trained(dir.path());
    let c = load_corpus(Path::new(&corpus)).unwrap();
    let d = c.time_model.duration(PoiId(0)).unwrap();
    let o = ant(&[
        "recommend",
        "--ckpt",
        &ckpt,
        "--corpus",
        &corpus,
        "--user",
        "0",
        "--start",
        "0",
        "--budget",
        &(d - 1.0).to_string(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("infeasible query"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(ant(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(ant(&[]).status.code(), Some(1));
    assert_eq!(ant(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ant(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope").to_string_lossy().into_owned();
    let out = dir.path().join("out").to_string_lossy().into_owned();
    assert_eq!(
        ant(&["evaluate", "--corpus", &missing, "--pop", "--out", &out])
            .status
            .code(),
        Some(2)
    );
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "no_such_key = 3\n").unwrap();
    let o = ant(&["synth", "--config", &cfg.to_string_lossy(), "--out", &out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn ingest_builds_a_corpus_from_checkins() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("user_id,poi_id,lat,lon,category,arrival_ts,departure_ts\n");
    // Six users walk the same four-stop loop on two separate days.
    for u in 0..6 {
        for day in 0..2i64 {
            let t0 = 1_700_000_000 + day * 86_400 + u * 600;
            for (k, poi) in ["a", "b", "c", "d"].iter().enumerate() {
                let arr = t0 + k as i64 * 3600;
                let lat = 40.75 + k as f64 * 0.002;
                csv.push_str(&format!(
                    "u{u},{poi},{lat},-73.98,cat{k},{arr},{}\n",
                    arr + 2400
                ));
            }
        }
    }
    let input = dir.path().join("checkins.csv");
    std::fs::write(&input, csv).unwrap();
    let out = dir.path().join("corpus");
    let o = ant(&[
        "ingest",
        "--checkins",
        &input.to_string_lossy(),
        "--mode",
        "gap",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let c = load_corpus(&out).unwrap();
    assert_eq!(c.trips.len(), 12);
    assert_eq!(c.n_pois(), 4);
    assert!(c.trips.iter().all(|t| t.trip.len() == 4));

    std::fs::write(&input, "user_id,poi\n").unwrap();
    let o = ant(&[
        "ingest",
        "--checkins",
        &input.to_string_lossy(),
        "--out",
        &out.to_string_lossy(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
