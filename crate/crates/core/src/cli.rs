//! The `ant` command line: corpus synthesis and ingestion, training,
//! evaluation, single-query recommendation and latency benchmarking.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 when an input file or the
//! requested computation is invalid.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::candidates::{CandidateBuilder, TripHypergraph};
use crate::dataset::{
    ingest_checkins, load_corpus, parse_checkins, save_corpus, Corpus, IngestOptions, SplitRule,
    SyntheticWorldConfig, DEFAULT_GAP_S,
};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::evaluation::{bench_latency, bench_to_csv, evaluate, PopPlanner};
use crate::generator::{DecodeMode, Generator};
use crate::geo::{PoiId, TripQuery, UserId};
use crate::nn::checkpoint;
use crate::training::{metrics_to_csv, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

const TRAIN_KEYS: &str = "\
Config keys (flat `key = value`, all optional):
  batch_size, pretrain_epochs, adv_epochs, batches_per_epoch,
  disc_pretrain_epochs, lr_pretrain, lr_adv, lr_disc, baseline_decay,
  baseline_enabled, teacher_forcing, sample_prefix, rng_seed, n_candidates,
  budget_slack, val_limit, record_timing, d_model, heads, layers, ffn_inner,
  poi_dim, category_dim, user_dim, max_len, disc_embed_dim, disc_hidden,
  disc_head_hidden";

const SYNTH_KEYS: &str = "\
Config keys (flat `key = value`, all optional):
  n_pois, n_categories, grid_extent_m, transition_concentration,
  mean_duration_s (list), n_trips, budget_range_s ([min, max]), rng_seed,
  n_users, distance_scale_m, min_trip_len, max_trip_len, walk_speed";

#[derive(Debug, Parser)]
#[command(
    name = "ant",
    version,
    about = "Time-budgeted trip recommendation with an adversarially trained generator"
)]
pub struct Cli {
    /// Seed for every random choice the command makes. Overrides `rng_seed`
    /// in config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for rollouts and evaluation. `1` makes runs bit-exact.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with planted category transitions.
    #[command(after_help = SYNTH_KEYS)]
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a check-in CSV into a corpus directory.
    Ingest(IngestArgs),
    /// Pre-train, then train adversarially; writes best.ant, last.ant and metrics.csv.
    #[command(after_help = TRAIN_KEYS)]
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint (or the popularity baseline) on a split.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        /// Generator checkpoint; omit together with `--pop` for the baseline.
        #[arg(long, required_unless_present = "pop")]
        ckpt: Option<PathBuf>,
        /// Evaluate the popularity baseline instead of a checkpoint.
        #[arg(long, conflicts_with = "ckpt")]
        pop: bool,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        /// Candidate-set size.
        #[arg(long, default_value_t = 200)]
        candidates: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recommend one trip and print it as JSON.
    Recommend {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        user: u32,
        #[arg(long)]
        start: u32,
        /// Time budget in seconds.
        #[arg(long)]
        budget: f64,
        #[arg(long, default_value_t = 200)]
        candidates: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
        mode: ModeArg,
    },
    /// Single-threaded latency per candidate-set size, as CSV.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "50,100,200,400")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub checkins: PathBuf,
    #[arg(long, value_enum, default_value_t = IngestMode::Gap)]
    pub mode: IngestMode,
    #[arg(long)]
    pub out: PathBuf,
    /// Idle time that starts a new trip in gap mode.
    #[arg(long, default_value_t = DEFAULT_GAP_S)]
    pub gap_s: i64,
    /// Fixed UTC offset used for calendar days in day mode.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub utc_offset_s: i64,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 5)]
    pub min_users: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IngestMode {
    Gap,
    Day,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Sample,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

/// Runs a parsed command inside a pool sized by `--workers`.
pub fn execute(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::invalid("--workers must be at least 1"));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let seed = cli.seed;
    pool.install(|| dispatch(cli.command, seed))
}

fn dispatch(cmd: Command, seed: Option<u64>) -> Result<()> {
    match cmd {
        Command::Synth { config, out } => synth(config.as_deref(), &out, seed),
        Command::Ingest(a) => ingest(&a),
        Command::Train {
            corpus,
            config,
            out,
        } => train(&corpus, config.as_deref(), &out, seed),
        Command::Evaluate {
            corpus,
            ckpt,
            pop,
            split,
            candidates,
            out,
        } => evaluate_cmd(&corpus, ckpt.as_deref(), pop, split, candidates, &out),
        Command::Recommend {
            ckpt,
            corpus,
            user,
            start,
            budget,
            candidates,
            mode,
        } => recommend(&ckpt, &corpus, user, start, budget, candidates, mode, seed),
        Command::Bench {
            ckpt,
            corpus,
            sizes,
            reps,
            out,
        } => bench(&ckpt, &corpus, &sizes, reps, out.as_deref(), seed),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => toml::from_str::<SyntheticWorldConfig>(&read_text(p)?)
            .map_err(|e| Error::Config(e.to_string()))?,
        None => SyntheticWorldConfig::default(),
    };
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    let corpus = crate::dataset::generate_synthetic_world(&cfg)?;
    save_corpus(out, &corpus)?;
    log::info!(
        "wrote {} POIs and {} trips to {}",
        corpus.n_pois(),
        corpus.trips.len(),
        out.display()
    );
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let rule = match a.mode {
        IngestMode::Gap => SplitRule::Gap { gap_s: a.gap_s },
        IngestMode::Day => SplitRule::CalendarDay {
            utc_offset_s: a.utc_offset_s,
        },
    };
    let opts = IngestOptions {
        rule,
        min_len: a.min_len,
        min_users_per_poi: a.min_users,
        ..Default::default()
    };
    let records = parse_checkins(&a.checkins)?;
    let corpus = ingest_checkins(&records, &opts)?;
    save_corpus(&a.out, &corpus)?;
    log::info!(
        "{} check-ins became {} trips over {} POIs",
        records.len(),
        corpus.trips.len(),
        corpus.n_pois()
    );
    Ok(())
}

/// Writes the generator and discriminator into one checkpoint file.
pub fn save_models(path: &Path, gen: &Generator, disc: &Discriminator) -> Result<()> {
    let mut blocks = gen.to_blocks();
    blocks.extend(disc.to_blocks());
    checkpoint::save(path, &blocks)
}

pub fn load_generator(path: &Path) -> Result<Generator> {
    Generator::from_blocks(&checkpoint::load(path)?)
}

fn train(corpus_dir: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::from_toml(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    let corpus = load_corpus(corpus_dir)?;
    create_dir(out)?;
    write_file(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    let outcome = Trainer::new(&corpus, cfg)?.run()?;
    save_models(&out.join("best.ant"), &outcome.best, &outcome.discriminator)?;
    save_models(&out.join("last.ant"), &outcome.last, &outcome.discriminator)?;
    write_file(
        &out.join("metrics.csv"),
        metrics_to_csv(&outcome.history).as_bytes(),
    )?;
    log::info!(
        "best validation HR {:.4}; outputs in {}",
        outcome.best_val_hr,
        out.display()
    );
    Ok(())
}

fn split_indices(corpus: &Corpus, split: SplitName) -> &[usize] {
    match split {
        SplitName::Train => &corpus.split.train,
        SplitName::Validation => &corpus.split.validation,
        SplitName::Test => &corpus.split.test,
    }
}

fn evaluate_cmd(
    corpus_dir: &Path,
    ckpt: Option<&Path>,
    pop: bool,
    split: SplitName,
    candidates: usize,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let train = corpus.train_trips();
    let builder = CandidateBuilder::new(&train, candidates);
    let idx = split_indices(&corpus, split);
    let report = match (ckpt, pop) {
        (Some(p), _) => evaluate(&load_generator(p)?, &corpus, idx, &builder)?,
        (None, true) => evaluate(
            &PopPlanner::from_trips(corpus.n_pois(), &train),
            &corpus,
            idx,
            &builder,
        )?,
        (None, false) => return Err(Error::invalid("either --ckpt or --pop is required")),
    };
    report.write_csv(out)?;
    println!(
        "{}",
        serde_json::json!({"n_queries": report.n_queries, "hr_mean": report.hr_mean, "osp_mean": report.osp_mean})
    );
    Ok(())
}

#[derive(Serialize)]
struct Recommendation {
    query: TripQuery,
    poi_sequence: Vec<PoiId>,
    per_step_probabilities: Vec<f64>,
    total_time_s: f64,
}

#[allow(clippy::too_many_arguments)]
fn recommend(
    ckpt: &Path,
    corpus_dir: &Path,
    user: u32,
    start: u32,
    budget: f64,
    candidates: usize,
    mode: ModeArg,
    seed: Option<u64>,
) -> Result<()> {
    let gen = load_generator(ckpt)?;
    let corpus = load_corpus(corpus_dir)?;
    let q = TripQuery::new(UserId(user), PoiId(start), budget)?;
    let cs = CandidateBuilder::new(&corpus.train_trips(), candidates).build(&q, &corpus.world)?;
    let mode = match mode {
        ModeArg::Greedy => DecodeMode::Greedy,
        ModeArg::Sample => DecodeMode::Sample,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
    let r = gen.generate_trip(&cs, &corpus.world, &corpus.time_model, mode, &mut rng)?;
    let rec = Recommendation {
        query: q,
        per_step_probabilities: r.step_probs(),
        poi_sequence: r.trip.pois,
        total_time_s: r.total_time_s,
    };
    let text = serde_json::to_string(&rec).map_err(|e| Error::invalid(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn bench(
    ckpt: &Path,
    corpus_dir: &Path,
    sizes: &[usize],
    reps: usize,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let gen = load_generator(ckpt)?;
    let corpus = load_corpus(corpus_dir)?;
    let hypergraph = TripHypergraph::build(&corpus.train_trips());
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
    let rows = bench_latency(&gen, &corpus, &hypergraph, sizes, reps, &mut rng)?;
    let csv = bench_to_csv(&rows);
    match out {
        Some(p) => write_file(p, csv.as_bytes()),
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| Error::io(Path::new("<stdout>"), e)),
    }
}
