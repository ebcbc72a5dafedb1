//! End-to-end experiment drivers shared by the CLI and the acceptance suite.
//!
//! Every random stream is derived from a root seed with [`derive_seed`], so a
//! run is reproducible regardless of how rayon schedules the work.

use std::collections::BTreeMap;
use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{diagnostics_report, diagnostics_report_without_oracle, DiagnosticsReport, MAX_ORACLE_VARIABLES};
use crate::decisions::{
    evaluate_decision_quality, make_task, oracle_minimize, pgd_minimize, sample_candidates, sample_theta, DecisionReport, DecisionRow,
    PgdConfig, TaskFamily,
};
use crate::error::{Error, Result};
use crate::grad::value_and_input_subgradient;
use crate::linalg::Matrix;
use crate::model::{init_model, random_model, Activation, Architecture};
use crate::rng::{derive_seed, rng_from_seed};
use crate::targets::{make_target, TargetName};
use crate::theory::{absorption_rate_table, cpwl_piece_lower_bound, log_log_slope, smallest_net_1d, RateRow};
use crate::train::{
    anchor_width, match_parameter_budget, relative_l2_error, sample_uniform_dataset, train, Dataset, ModelVariant,
    TrainConfig,
};

/// Tolerance on the primal-dual gap and the oracle error.
pub const GAP_TOLERANCE: f64 = 1e-9;
/// Tolerance on every feasibility and tightness metric.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub trials: usize,
    pub d0: usize,
    pub width: usize,
    pub depth: usize,
    pub quad_blocks: usize,
    pub norm_blocks: usize,
    /// Rank of each quadratic block and dimension of each norm block.
    pub branch_dim: usize,
    pub passthrough: Vec<bool>,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            trials: 150,
            d0: 20,
            width: 32,
            depth: 3,
            quad_blocks: 2,
            norm_blocks: 2,
            branch_dim: 20,
            passthrough: vec![false, true],
            seed: 0,
        }
    }
}

impl VerifyConfig {
    pub fn architecture(&self, passthrough: bool) -> Architecture {
        Architecture::backbone(self.d0, vec![self.width; self.depth], passthrough, Activation::ReLU)
            .with_branches(vec![self.branch_dim; self.quad_blocks], vec![self.branch_dim; self.norm_blocks])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub d0: usize,
    pub width: usize,
    pub depth: usize,
    pub passthrough: bool,
    pub oracle_checked: bool,
    #[serde(flatten)]
    pub metrics: DiagnosticsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub passthrough: bool,
    pub trials: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub config: VerifyConfig,
    pub summaries: Vec<VerifySummary>,
    pub trials: Vec<TrialRecord>,
}

/// Seed of trial `i` under passthrough setting `p`.
pub fn verify_trial_seed(root: u64, p: usize, i: usize) -> u64 {
    derive_seed(derive_seed(root, p as u64), i as u64)
}

/// Random models at random standard-normal inputs, each checked by
/// [`diagnostics_report`] (the oracle is skipped when the lift is too large).
pub fn run_verify(config: &VerifyConfig) -> Result<VerifyOutput> {
    if config.trials == 0 {
        return Err(Error::InvalidArgument("verify needs at least one trial".into()));
    }
    let mut trials = Vec::new();
    let mut summaries = Vec::new();
    for (p, &passthrough) in config.passthrough.iter().enumerate() {
        let arch = config.architecture(passthrough);
        arch.check()?;
        let oracle = config.width * config.depth <= MAX_ORACLE_VARIABLES;
        let records = (0..config.trials)
            .into_par_iter()
            .map(|i| {
                let seed = verify_trial_seed(config.seed, p, i);
                let model = random_model(&arch, seed)?;
                let mut rng = rng_from_seed(derive_seed(seed, 0));
                let x: Vec<f64> = (0..config.d0).map(|_| StandardNormal.sample(&mut rng)).collect();
                let metrics = if oracle {
                    diagnostics_report(&model, &x)?
                } else {
                    diagnostics_report_without_oracle(&model, &x)?
                };
                Ok(TrialRecord {
                    seed,
                    d0: config.d0,
                    width: config.width,
                    depth: config.depth,
                    passthrough,
                    oracle_checked: oracle,
                    metrics,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        summaries.push(summarize(passthrough, &records));
        trials.extend(records);
    }
    Ok(VerifyOutput { config: config.clone(), summaries, trials })
}

fn summarize(passthrough: bool, records: &[TrialRecord]) -> VerifySummary {
    let mut metrics = BTreeMap::new();
    for (k, name) in DiagnosticsReport::FIELD_NAMES.iter().enumerate() {
        let vals: Vec<f64> = records.iter().map(|r| r.metrics.values()[k]).filter(|v| !v.is_nan()).collect();
        let summary = if vals.is_empty() {
            MetricSummary { mean: None, max: None }
        } else {
            MetricSummary {
                mean: Some(vals.iter().sum::<f64>() / vals.len() as f64),
                max: Some(vals.iter().copied().fold(0.0, f64::max)),
            }
        };
        metrics.insert(name.to_string(), summary);
    }
    VerifySummary { passthrough, trials: records.len(), metrics }
}

/// Threshold for each diagnostics metric.
pub fn metric_tolerance(name: &str) -> f64 {
    match name {
        "primal_dual_gap" | "forward_vs_oracle_abs_err" => GAP_TOLERANCE,
        _ => FEASIBILITY_TOLERANCE,
    }
}

/// One line per metric whose maximum exceeds its tolerance.
pub fn verify_breaches(out: &VerifyOutput) -> Vec<String> {
    let mut lines = Vec::new();
    for s in &out.summaries {
        for (name, m) in &s.metrics {
            if let Some(max) = m.max {
                if !(max <= metric_tolerance(name)) {
                    lines.push(format!(
                        "verify: passthrough={} {name} max {max:e} exceeds {:e}",
                        s.passthrough,
                        metric_tolerance(name)
                    ));
                }
            }
        }
    }
    lines
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub targets: Vec<TargetName>,
    pub dims: Vec<usize>,
    pub variants: Vec<ModelVariant>,
    pub seeds: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub domain: (f64, f64),
    pub anchor_depth: usize,
    /// Fit and score z-scored targets (training mean and std) instead of raw values.
    pub standardize: bool,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            targets: vec![TargetName::NormEuclid],
            dims: vec![10],
            variants: ModelVariant::ALL.to_vec(),
            seeds: 3,
            n_train: 2000,
            n_val: 1000,
            n_test: 2000,
            domain: (-3.0, 3.0),
            anchor_depth: 2,
            standardize: false,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub target: String,
    pub model: String,
    pub d: usize,
    pub relerr_mean: f64,
    pub relerr_std: f64,
    pub params: usize,
    pub depth: usize,
    pub width: usize,
}

/// The anchor SOC model's parameter count and width for dimension `d`.
pub fn anchor_budget(d: usize, anchor_depth: usize) -> (usize, usize) {
    let width = anchor_width(d);
    (ModelVariant::SOC.architecture(d, width, anchor_depth).parameter_count(), width)
}

fn target_seed(root: u64, target: TargetName, d: usize) -> u64 {
    let idx = TargetName::ALL.iter().position(|t| *t == target).unwrap_or(0) as u64;
    derive_seed(derive_seed(root, 1000 + idx), d as u64)
}

/// Relative test error of one (target, d, variant, seed index) run, plus the
/// model's parameter count and depth.
pub fn benchmark_run(
    config: &BenchmarkConfig,
    target: TargetName,
    d: usize,
    variant: ModelVariant,
    seed_index: usize,
) -> Result<(f64, usize, usize)> {
    let (budget, width) = anchor_budget(d, config.anchor_depth);
    let depth = match_parameter_budget(budget, d, width, variant)?;
    let arch = variant.architecture(d, width, depth);
    let tseed = target_seed(config.seed, target, d);
    let f = make_target(target, d, tseed)?;
    let s = derive_seed(tseed, seed_index as u64);
    let (lo, hi) = config.domain;
    let tr = sample_uniform_dataset(&f, d, config.n_train, lo, hi, derive_seed(s, 1))?;
    let va = sample_uniform_dataset(&f, d, config.n_val, lo, hi, derive_seed(s, 2))?;
    let te = sample_uniform_dataset(&f, d, config.n_test, lo, hi, derive_seed(s, 3))?;
    let (tr, va, te) = if config.standardize {
        let (mean, std) = tr.target_moments();
        let std = if std > 0.0 { std } else { 1.0 };
        (tr.standardized(mean, std), va.standardized(mean, std), te.standardized(mean, std))
    } else {
        (tr, va, te)
    };
    let init = init_model(&arch, derive_seed(s, 4))?;
    let cfg = TrainConfig { seed: derive_seed(s, 5), ..config.train.clone() };
    let (model, _) = train(&init, &tr, &va, &cfg)?;
    Ok((relative_l2_error(&model, &te)?, arch.parameter_count(), depth))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Budget-matched comparison; one row per (target, d, variant) with the
/// mean and sample standard deviation of RelErr over seeds.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    if config.seeds == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one seed".into()));
    }
    let mut jobs = Vec::new();
    for &t in &config.targets {
        for &d in &config.dims {
            for &v in &config.variants {
                for s in 0..config.seeds {
                    jobs.push((t, d, v, s));
                }
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|&(t, d, v, s)| benchmark_run(config, t, d, v, s))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (group, chunk) in jobs.chunks(config.seeds).zip(results.chunks(config.seeds)) {
        let (t, d, v, _) = group[0];
        let errs: Vec<f64> = chunk.iter().map(|r| r.0).collect();
        let (relerr_mean, relerr_std) = mean_std(&errs);
        rows.push(BenchmarkRow {
            target: t.to_string(),
            model: v.to_string(),
            d,
            relerr_mean,
            relerr_std,
            params: chunk[0].1,
            depth: chunk[0].2,
            width: anchor_width(d),
        });
    }
    Ok(rows)
}

pub fn write_benchmark_csv<W: Write>(rows: &[BenchmarkRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Directional thresholds: `(target, d, SOC upper bound, ReLU lower bound)`.
pub const BENCHMARK_THRESHOLDS: [(TargetName, usize, f64, f64); 2] =
    [(TargetName::NormEuclid, 10, 0.25, 0.40), (TargetName::QuadraticIso, 10, 0.55, 0.70)];

pub fn benchmark_breaches(rows: &[BenchmarkRow]) -> Vec<String> {
    let mut lines = Vec::new();
    for (t, d, soc_max, relu_min) in BENCHMARK_THRESHOLDS {
        let find = |m: ModelVariant| rows.iter().find(|r| r.target == t.as_str() && r.d == d && r.model == m.as_str());
        if let Some(r) = find(ModelVariant::SOC) {
            if !(r.relerr_mean <= soc_max) {
                lines.push(format!("benchmark: {t} d={d} SOC RelErr {:.4} exceeds {soc_max}", r.relerr_mean));
            }
        }
        if let Some(r) = find(ModelVariant::ReLU) {
            if !(r.relerr_mean >= relu_min) {
                lines.push(format!("benchmark: {t} d={d} ReLU RelErr {:.4} below {relu_min}", r.relerr_mean));
            }
        }
    }
    for r in rows {
        let soc = rows.iter().find(|s| s.target == r.target && s.d == r.d && s.model == "SOC");
        if let (Some(soc), true) = (soc, r.model == "ReLU") {
            if !(soc.relerr_mean < r.relerr_mean) {
                lines.push(format!("benchmark: {} d={} SOC does not beat ReLU", r.target, r.d));
            }
        }
    }
    lines
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecideConfig {
    pub families: Vec<TaskFamily>,
    pub dims: Vec<usize>,
    pub variants: Vec<ModelVariant>,
    pub instances: usize,
    pub candidates: usize,
    pub val_candidates: usize,
    pub width: usize,
    pub depth: usize,
    pub train: TrainConfig,
    pub decision_restarts: usize,
    pub decision_steps: usize,
    pub oracle_restarts: usize,
    pub oracle_steps: usize,
    pub seed: u64,
}

impl Default for DecideConfig {
    fn default() -> Self {
        DecideConfig {
            families: vec![TaskFamily::SimplexSocp, TaskFamily::BudgetHuber],
            dims: vec![10],
            variants: vec![ModelVariant::QuadOnly],
            instances: 50,
            candidates: 64,
            val_candidates: 16,
            width: 16,
            depth: 2,
            train: TrainConfig { epochs: 400, batch_size: 64, learning_rate: 1e-2, ..TrainConfig::default() },
            decision_restarts: 5,
            decision_steps: 200,
            oracle_restarts: 20,
            oracle_steps: 2000,
            seed: 0,
        }
    }
}

/// Frozen task seed for `(family, d)`.
pub fn decide_task_seed(root: u64, family: TaskFamily, d: usize) -> u64 {
    let idx = TaskFamily::ALL.iter().position(|f| *f == family).unwrap_or(0) as u64;
    derive_seed(derive_seed(root, 2000 + idx), d as u64)
}

/// Trains a surrogate on candidate points of one instance, minimizes it with
/// PGD, and scores the decision against the oracle minimizer.
pub fn decide_instance(
    config: &DecideConfig,
    family: TaskFamily,
    d: usize,
    variant: ModelVariant,
    instance: usize,
) -> Result<(DecisionRow, Vec<f64>)> {
    let task = make_task(family, d, decide_task_seed(config.seed, family, d))?;
    let s = derive_seed(task.seed, instance as u64);
    let theta = sample_theta(&task, derive_seed(s, 0));
    let inst = task.instantiate(&theta)?;
    let label = |xs: Matrix| -> Result<Dataset> {
        let ys = (0..xs.rows()).map(|i| inst.value_and_grad(xs.row(i)).0).collect();
        Dataset::new(xs, ys)
    };
    let tr = label(sample_candidates(&task.feasible_set, config.candidates, derive_seed(s, 1))?)?;
    let va = label(sample_candidates(&task.feasible_set, config.val_candidates.max(1), derive_seed(s, 2))?)?;
    let (mean, std) = tr.target_moments();
    let std = if std > 0.0 { std } else { 1.0 };
    let arch = variant.architecture(d, config.width, config.depth);
    let init = init_model(&arch, derive_seed(s, 3))?;
    let cfg = TrainConfig { seed: derive_seed(s, 4), ..config.train.clone() };
    let (model, _) = train(&init, &tr.standardized(mean, std), &va.standardized(mean, std), &cfg)?;

    let surrogate = |x: &[f64]| value_and_input_subgradient(&model, x).unwrap_or((f64::NAN, vec![f64::NAN; d]));
    let pgd = PgdConfig {
        restarts: config.decision_restarts,
        steps: config.decision_steps,
        ..PgdConfig::decision(derive_seed(s, 5))
    };
    let (x_hat, s_val) = pgd_minimize(surrogate, &task.feasible_set, &pgd)?;
    let oracle = PgdConfig {
        restarts: config.oracle_restarts,
        steps: config.oracle_steps,
        ..PgdConfig::oracle(derive_seed(s, 6))
    };
    let (report, x_star): (DecisionReport, Vec<f64>) =
        evaluate_decision_quality(&task, &theta, &x_hat, s_val * std + mean, &oracle)?;
    let row = DecisionRow {
        task: family.task_id().into(),
        family: family.structure_kind().into(),
        d,
        seed: s,
        model: variant.to_string(),
        regret: report.regret,
        decision_error: report.decision_error,
        surrogate_value: report.surrogate_value_at_decision,
        true_value: report.true_value_at_decision,
    };
    Ok((row, x_star))
}

/// Oracle optimum of instance `instance` computed with an alternative seed
/// stream `alt`, independent of the one [`decide_instance`] uses.
pub fn decide_oracle_value(config: &DecideConfig, family: TaskFamily, d: usize, instance: usize, alt: u64) -> Result<f64> {
    let task = make_task(family, d, decide_task_seed(config.seed, family, d))?;
    let s = derive_seed(task.seed, instance as u64);
    let theta = sample_theta(&task, derive_seed(s, 0));
    let oracle = PgdConfig {
        restarts: config.oracle_restarts,
        steps: config.oracle_steps,
        ..PgdConfig::oracle(derive_seed(derive_seed(s, 7), alt))
    };
    Ok(oracle_minimize(&task, &theta, &oracle)?.1)
}

pub fn run_decide(config: &DecideConfig) -> Result<Vec<DecisionRow>> {
    let mut jobs = Vec::new();
    for &f in &config.families {
        for &d in &config.dims {
            for &v in &config.variants {
                for i in 0..config.instances {
                    jobs.push((f, d, v, i));
                }
            }
        }
    }
    jobs.par_iter()
        .map(|&(f, d, v, i)| decide_instance(config, f, d, v, i).map(|r| r.0))
        .collect()
}

/// Regret must be non-negative up to the oracle's tolerance.
pub const REGRET_FLOOR: f64 = -1e-9;

pub fn decide_breaches(rows: &[DecisionRow]) -> Vec<String> {
    rows.iter()
        .filter(|r| !(r.regret >= REGRET_FLOOR))
        .map(|r| format!("decide: {} d={} seed={} {} regret {:e} below {REGRET_FLOOR:e}", r.task, r.d, r.seed, r.model, r.regret))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryOutput {
    pub rows: Vec<RateRow>,
    /// `(d, fitted log-log slope, expected −2/d)`.
    pub slopes: Vec<(usize, f64, f64)>,
    /// `(eps, smallest net size, lower bound)` in one dimension.
    pub piece_counts: Vec<(f64, usize, f64)>,
}

pub const RATE_SLOPE_TOLERANCE: f64 = 0.25;

pub fn run_theory(dims: &[usize], ks: &[usize], eps: &[f64]) -> Result<TheoryOutput> {
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &d in dims {
        let table = absorption_rate_table(d, ks)?;
        slopes.push((d, log_log_slope(&table), -2.0 / d as f64));
        rows.extend(table);
    }
    let piece_counts = eps
        .iter()
        .map(|&e| Ok((e, smallest_net_1d(e, 100_000)?.0, cpwl_piece_lower_bound(2.0, 1, 1.0, e)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TheoryOutput { rows, slopes, piece_counts })
}

pub fn theory_breaches(out: &TheoryOutput) -> Vec<String> {
    let mut lines = Vec::new();
    for &(d, slope, expected) in &out.slopes {
        if !((slope - expected).abs() <= RATE_SLOPE_TOLERANCE) {
            lines.push(format!("theory: d={d} slope {slope:.4} not within {RATE_SLOPE_TOLERANCE} of {expected:.4}"));
        }
    }
    for &(eps, n, bound) in &out.piece_counts {
        if !(n as f64 >= bound) {
            lines.push(format!("theory: eps={eps} net size {n} below lower bound {bound:.4}"));
        }
    }
    lines
}
