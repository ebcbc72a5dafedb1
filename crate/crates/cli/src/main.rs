//! `soc-icnn`: reproducible experiment runs for SOC-ICNN models.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 a `--check`
//! threshold was breached.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use soc_icnn::decisions::{write_decision_csv, TaskFamily};
use soc_icnn::experiments::{
    anchor_budget, benchmark_breaches, decide_breaches, run_benchmark, run_decide, run_theory, run_verify,
    theory_breaches, verify_breaches, write_benchmark_csv, BenchmarkConfig, DecideConfig, VerifyConfig,
};
use soc_icnn::model::init_model;
use soc_icnn::rng::derive_seed;
use soc_icnn::targets::{make_target, TargetName};
use soc_icnn::theory::write_rate_csv;
use soc_icnn::train::{
    anchor_width, match_parameter_budget, relative_l2_error, sample_uniform_dataset, train, write_history_csv,
    ModelVariant, TrainConfig,
};
use soc_icnn::SocIcnnParams;

#[derive(Parser, Debug)]
#[command(name = "soc-icnn", version, about = "Train, certify and benchmark SOC-ICNN models")]
struct Cli {
    /// Root seed; every random stream of the run is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Directory that receives every artifact of the run.
    #[arg(long, global = true, default_value = "soc-icnn-out")]
    output_dir: PathBuf,

    /// Exit with status 3 if an acceptance threshold is breached.
    #[arg(long, global = true)]
    check: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model to a named target; writes model.json, history.csv, metrics.json.
    Train(TrainArgs),
    /// Certificate sweep over random models; writes diagnostics.json.
    Verify(VerifyArgs),
    /// Budget-matched approximation benchmark; writes benchmark.csv.
    Benchmark(BenchmarkArgs),
    /// Downstream decision quality of trained surrogates; writes decisions.csv.
    Decide(DecideArgs),
    /// Tangent-net absorption rates and piece-count bounds; writes theory.csv.
    Theory(TheoryArgs),
}

#[derive(Args, Debug, Clone)]
struct OptimArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

impl OptimArgs {
    fn apply(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.lr.unwrap_or(base.learning_rate),
            early_stop_patience: self.patience.unwrap_or(base.early_stop_patience),
            ..base
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    target: TargetName,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value = "SOC")]
    variant: ModelVariant,
    /// Hidden width; defaults to the anchor width for `d`.
    #[arg(long)]
    width: Option<usize>,
    /// Backbone depth; defaults to the depth matching the anchor budget.
    #[arg(long)]
    depth: Option<usize>,
    /// Start from this model instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_val: usize,
    #[arg(long, default_value_t = 2000)]
    n_test: usize,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    lo: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    hi: f64,
    /// Also write train.csv, val.csv and test.csv.
    #[arg(long)]
    save_data: bool,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Passthrough {
    Both,
    True,
    False,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 150)]
    trials: usize,
    #[arg(long, default_value_t = 20)]
    d0: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 2)]
    quad_blocks: usize,
    #[arg(long, default_value_t = 2)]
    norm_blocks: usize,
    /// Quadratic rank and norm dimension of every branch; defaults to d0.
    #[arg(long)]
    branch_dim: Option<usize>,
    #[arg(long, value_enum, default_value_t = Passthrough::Both)]
    passthrough: Passthrough,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long = "target", alias = "targets", value_delimiter = ',', default_value = "NormEuclid")]
    targets: Vec<TargetName>,
    #[arg(long = "d", alias = "dims", value_delimiter = ',', default_value = "10")]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "ReLU,Softplus,Quad,Norm,SOC")]
    variants: Vec<ModelVariant>,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_val: usize,
    #[arg(long, default_value_t = 2000)]
    n_test: usize,
    /// Fit and score z-scored targets instead of raw values.
    #[arg(long)]
    standardize: bool,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct DecideArgs {
    #[arg(long = "family", alias = "families", value_delimiter = ',', default_value = "SimplexSocp,BudgetHuber")]
    families: Vec<TaskFamily>,
    #[arg(long = "d", alias = "dims", value_delimiter = ',', default_value = "10")]
    dims: Vec<usize>,
    #[arg(long = "models", alias = "variants", value_delimiter = ',', default_value = "Quad")]
    models: Vec<ModelVariant>,
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 64)]
    candidates: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 20)]
    oracle_restarts: usize,
    #[arg(long, default_value_t = 2000)]
    oracle_steps: usize,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.01")]
    eps: Vec<f64>,
}

struct Outcome {
    config: Value,
    breaches: Vec<String>,
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> soc_icnn::Result<()> {
    fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn run_train(args: &TrainArgs, seed: u64, dir: &Path) -> soc_icnn::Result<Outcome> {
    let d = args.d;
    let width = args.width.unwrap_or_else(|| anchor_width(d));
    let init = match &args.init {
        Some(path) => SocIcnnParams::from_json(&fs::read_to_string(path)?)?,
        None => {
            let depth = match args.depth {
                Some(depth) => depth,
                None => match_parameter_budget(anchor_budget(d, 2).0, d, width, args.variant)?,
            };
            init_model(&args.variant.architecture(d, width, depth), derive_seed(seed, 4))?
        }
    };
    let target = make_target(args.target, d, derive_seed(seed, 0))?;
    let tr = sample_uniform_dataset(&target, d, args.n_train, args.lo, args.hi, derive_seed(seed, 1))?;
    let va = sample_uniform_dataset(&target, d, args.n_val, args.lo, args.hi, derive_seed(seed, 2))?;
    let te = sample_uniform_dataset(&target, d, args.n_test, args.lo, args.hi, derive_seed(seed, 3))?;
    let cfg = args.optim.apply(TrainConfig { seed: derive_seed(seed, 5), ..TrainConfig::default() });
    let (model, history) = train(&init, &tr, &va, &cfg)?;
    let relerr = relative_l2_error(&model, &te)?;

    write(dir, "model.json", model.to_json()?.as_bytes())?;
    let mut hist = Vec::new();
    write_history_csv(&history, &mut hist)?;
    write(dir, "history.csv", &hist)?;
    if args.save_data {
        for (name, data) in [("train.csv", &tr), ("val.csv", &va), ("test.csv", &te)] {
            let mut buf = Vec::new();
            data.write_csv(&mut buf)?;
            write(dir, name, &buf)?;
        }
    }
    let metrics = json!({
        "target": args.target.as_str(),
        "d": d,
        "variant": args.variant.as_str(),
        "params": model.parameter_count(),
        "depth": model.depth(),
        "width": width,
        "epochs_run": history.len() - 1,
        "relerr": relerr,
    });
    write(dir, "metrics.json", serde_json::to_string_pretty(&metrics)?.as_bytes())?;
    println!("{} d={d} {}: RelErr {relerr:.6} ({} params)", args.target, args.variant, model.parameter_count());
    Ok(Outcome { config: json!({ "train": cfg, "width": width, "metrics": metrics }), breaches: vec![] })
}

fn run_verify_cmd(args: &VerifyArgs, seed: u64, dir: &Path) -> soc_icnn::Result<Outcome> {
    let config = VerifyConfig {
        trials: args.trials,
        d0: args.d0,
        width: args.width,
        depth: args.depth,
        quad_blocks: args.quad_blocks,
        norm_blocks: args.norm_blocks,
        branch_dim: args.branch_dim.unwrap_or(args.d0),
        passthrough: match args.passthrough {
            Passthrough::Both => vec![false, true],
            Passthrough::True => vec![true],
            Passthrough::False => vec![false],
        },
        seed,
    };
    let out = run_verify(&config)?;
    write(dir, "diagnostics.json", serde_json::to_string_pretty(&out)?.as_bytes())?;
    for s in &out.summaries {
        let gap = s.metrics["primal_dual_gap"];
        println!(
            "passthrough={}: {} trials, primal_dual_gap mean {:.3e} max {:.3e}",
            s.passthrough,
            s.trials,
            gap.mean.unwrap_or(f64::NAN),
            gap.max.unwrap_or(f64::NAN)
        );
    }
    Ok(Outcome { config: serde_json::to_value(&config)?, breaches: verify_breaches(&out) })
}

fn run_benchmark_cmd(args: &BenchmarkArgs, seed: u64, dir: &Path) -> soc_icnn::Result<Outcome> {
    let config = BenchmarkConfig {
        targets: args.targets.clone(),
        dims: args.dims.clone(),
        variants: args.variants.clone(),
        seeds: args.seeds,
        n_train: args.n_train,
        n_val: args.n_val,
        n_test: args.n_test,
        standardize: args.standardize,
        train: args.optim.apply(TrainConfig::default()),
        seed,
        ..BenchmarkConfig::default()
    };
    let rows = run_benchmark(&config)?;
    let mut buf = Vec::new();
    write_benchmark_csv(&rows, &mut buf)?;
    write(dir, "benchmark.csv", &buf)?;
    for r in &rows {
        println!("{} d={} {}: RelErr {:.4} ± {:.4} ({} params)", r.target, r.d, r.model, r.relerr_mean, r.relerr_std, r.params);
    }
    Ok(Outcome { config: serde_json::to_value(&config)?, breaches: benchmark_breaches(&rows) })
}

fn run_decide_cmd(args: &DecideArgs, seed: u64, dir: &Path) -> soc_icnn::Result<Outcome> {
    let base = DecideConfig::default();
    let config = DecideConfig {
        families: args.families.clone(),
        dims: args.dims.clone(),
        variants: args.models.clone(),
        instances: args.instances,
        candidates: args.candidates,
        width: args.width,
        depth: args.depth,
        oracle_restarts: args.oracle_restarts,
        oracle_steps: args.oracle_steps,
        train: args.optim.apply(base.train.clone()),
        seed,
        ..base
    };
    let rows = run_decide(&config)?;
    let mut buf = Vec::new();
    write_decision_csv(&rows, &mut buf)?;
    write(dir, "decisions.csv", &buf)?;
    for &f in &config.families {
        for &d in &config.dims {
            for v in &config.variants {
                let sel: Vec<_> =
                    rows.iter().filter(|r| r.task == f.task_id() && r.d == d && r.model == v.as_str()).collect();
                let n = sel.len().max(1) as f64;
                println!(
                    "{} d={d} {v}: mean regret {:.4e}, mean decision error {:.4}",
                    f.task_id(),
                    sel.iter().map(|r| r.regret).sum::<f64>() / n,
                    sel.iter().map(|r| r.decision_error).sum::<f64>() / n
                );
            }
        }
    }
    Ok(Outcome { config: serde_json::to_value(&config)?, breaches: decide_breaches(&rows) })
}

fn run_theory_cmd(args: &TheoryArgs, dir: &Path) -> soc_icnn::Result<Outcome> {
    let out = run_theory(&args.dims, &args.ks, &args.eps)?;
    let mut buf = Vec::new();
    write_rate_csv(&out.rows, &mut buf)?;
    write(dir, "theory.csv", &buf)?;
    write(dir, "theory_summary.json", serde_json::to_string_pretty(&out)?.as_bytes())?;
    for (d, slope, expected) in &out.slopes {
        println!("d={d}: log-log slope {slope:.4} (expected {expected:.4})");
    }
    for (eps, n, bound) in &out.piece_counts {
        println!("eps={eps}: smallest net {n}, lower bound {bound:.4}");
    }
    Ok(Outcome {
        config: json!({ "dims": args.dims, "ks": args.ks, "eps": args.eps }),
        breaches: theory_breaches(&out),
    })
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("SOCICNN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("SOCICNN_THREADS must be a positive integer, got `{raw}`"))?;
    if n == 0 {
        return Err("SOCICNN_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if let Err(e) = fs::create_dir_all(&cli.output_dir) {
        eprintln!("error: cannot create {}: {e}", cli.output_dir.display());
        return ExitCode::FAILURE;
    }
    let dir = cli.output_dir.as_path();
    let (name, result) = match &cli.command {
        Command::Train(a) => ("train", run_train(a, cli.seed, dir)),
        Command::Verify(a) => ("verify", run_verify_cmd(a, cli.seed, dir)),
        Command::Benchmark(a) => ("benchmark", run_benchmark_cmd(a, cli.seed, dir)),
        Command::Decide(a) => ("decide", run_decide_cmd(a, cli.seed, dir)),
        Command::Theory(a) => ("theory", run_theory_cmd(a, dir)),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let manifest = json!({
        "subcommand": name,
        "argv": std::env::args().collect::<Vec<_>>(),
        "seed": cli.seed,
        "check": cli.check,
        "library_version": soc_icnn::VERSION,
        "config": outcome.config,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is valid JSON");
    if let Err(e) = fs::write(dir.join("manifest.json"), text) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::FAILURE;
    }
    if cli.check && !outcome.breaches.is_empty() {
        for line in &outcome.breaches {
            eprintln!("check failed: {line}");
        }
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
