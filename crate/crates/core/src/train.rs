//! Datasets, projected-Adam training, and the budget-matching rules of the
//! approximation benchmark.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::grad::parameter_gradients;
use crate::linalg::Matrix;
use crate::model::{Activation, Architecture, SocIcnnParams};
use crate::rng::rng_from_seed;
use crate::targets::TargetFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            batch_size: 128,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            early_stop_patience: 50,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::InvalidArgument("learning rate and epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub xs: Matrix,
    pub ys: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Matrix, ys: Vec<f64>) -> Result<Self> {
        if xs.rows() != ys.len() {
            return dim_err(format!("{} inputs but {} targets", xs.rows(), ys.len()));
        }
        if xs.as_slice().iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset contains a non-finite entry".into()));
        }
        Ok(Dataset { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let xs = Matrix::from_fn(idx.len(), self.dim(), |i, j| self.xs[(idx[i], j)]);
        Dataset { xs, ys: idx.iter().map(|&i| self.ys[i]).collect() }
    }

    /// Mean and population standard deviation of the targets.
    pub fn target_moments(&self) -> (f64, f64) {
        let n = self.len() as f64;
        let mean = self.ys.iter().sum::<f64>() / n;
        let var = self.ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Targets mapped through `(y − mean) / std`.
    pub fn standardized(&self, mean: f64, std: f64) -> Dataset {
        Dataset { xs: self.xs.clone(), ys: self.ys.iter().map(|y| (y - mean) / std).collect() }
    }

    /// CSV with header `x0,…,x{d-1},y`; floats use shortest round-trip text.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.xs.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.ys[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let d = header.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
            Error::InvalidArgument("dataset CSV needs at least one input column and y".into())
        })?;
        for (j, h) in header.iter().enumerate() {
            let expected = if j == d { "y".to_string() } else { format!("x{j}") };
            if h != expected {
                return Err(Error::InvalidArgument(format!("unexpected column `{h}`, wanted `{expected}`")));
            }
        }
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number `{s}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            ys.push(vals[d]);
            rows.push(vals[..d].to_vec());
        }
        Dataset::new(Matrix::from_rows(&rows, d)?, ys)
    }
}

/// `n` points with i.i.d. `U[lo, hi]` coordinates labelled by the target.
pub fn sample_uniform_dataset(
    target: &TargetFunction,
    d: usize,
    n: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be positive".into()));
    }
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("empty sampling range [{lo}, {hi}]")));
    }
    if d != target.d {
        return dim_err(format!("target has dimension {}, requested {d}", target.d));
    }
    let mut rng = rng_from_seed(seed);
    let xs = Matrix::from_fn(n, d, |_, _| rng.random_range(lo..=hi));
    let ys = (0..n).map(|i| target.value(xs.row(i))).collect();
    Dataset::new(xs, ys)
}

pub fn mse(params: &SocIcnnParams, data: &Dataset) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..data.len() {
        let r = params.forward(data.xs.row(i))?.total - data.ys[i];
        s += r * r;
    }
    Ok(s / data.len() as f64)
}

/// `‖prediction − y‖₂ / ‖y‖₂` over the dataset.
pub fn relative_l2_error(params: &SocIcnnParams, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..test.len() {
        let y = test.ys[i];
        let r = params.forward(test.xs.row(i))?.total - y;
        num += r * r;
        den += y * y;
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("relative error is undefined for all-zero targets".into()));
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub fn write_history_csv<W: Write>(history: &[HistoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for h in history {
        w.write_record([h.epoch.to_string(), h.train_loss.to_string(), h.val_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut SocIcnnParams, grads: &SocIcnnParams, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.t);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.t);
        let flat_grads = grads.tensors();
        let mut k = 0;
        for ((p, _), g) in params.tensors_mut().into_iter().zip(flat_grads) {
            for (pi, &gi) in p.iter_mut().zip(g) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = cfg.adam_beta1 * *m + (1.0 - cfg.adam_beta1) * gi;
                *v = cfg.adam_beta2 * *v + (1.0 - cfg.adam_beta2) * gi * gi;
                *pi -= cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + cfg.adam_eps);
                k += 1;
            }
        }
    }
}

/// Mini-batch Adam with a feasibility projection after every step. Returns
/// the checkpoint with the lowest validation loss and the per-epoch history
/// (epoch 0 is the initial model).
pub fn train(
    params: &SocIcnnParams,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<(SocIcnnParams, Vec<HistoryRow>)> {
    config.check()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    if train.dim() != params.d0 || val.dim() != params.d0 {
        return dim_err("dataset dimension does not match the model");
    }
    let mut model = params.project_feasible();
    let n_params: usize = model.tensors().iter().map(|t| t.len()).sum();
    let mut adam = Adam::new(n_params);
    let mut rng = rng_from_seed(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = vec![HistoryRow { epoch: 0, train_loss: mse(&model, train)?, val_loss: mse(&model, val)? }];
    let mut best = model.clone();
    let mut best_val = history[0].val_loss;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = train.subset(chunk);
            let (loss, grads) = parameter_gradients(&model, &batch.xs, &batch.ys)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss is {loss} at epoch {epoch}, batch {b}")));
            }
            adam.step(&mut model, &grads, config);
            model.project_feasible_in_place();
        }
        let row = HistoryRow { epoch, train_loss: mse(&model, train)?, val_loss: mse(&model, val)? };
        if !row.train_loss.is_finite() || !row.val_loss.is_finite() {
            return Err(Error::NonFinite(format!("loss diverged at epoch {epoch}: {row:?}")));
        }
        history.push(row);
        if row.val_loss < best_val {
            best_val = row.val_loss;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                break;
            }
        }
    }
    Ok((best, history))
}

/// Model families compared in the approximation benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    ReLU,
    Softplus,
    QuadOnly,
    NormOnly,
    SOC,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] =
        [ModelVariant::ReLU, ModelVariant::Softplus, ModelVariant::QuadOnly, ModelVariant::NormOnly, ModelVariant::SOC];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::ReLU => "ReLU",
            ModelVariant::Softplus => "Softplus",
            ModelVariant::QuadOnly => "Quad",
            ModelVariant::NormOnly => "Norm",
            ModelVariant::SOC => "SOC",
        }
    }

    /// Backbone of `depth` layers of `width` with passthrough, plus one rank-`d0`
    /// quadratic and/or one `d0`-dimensional conic branch as the variant dictates.
    pub fn architecture(self, d0: usize, width: usize, depth: usize) -> Architecture {
        let activation = if self == ModelVariant::Softplus { Activation::Softplus } else { Activation::ReLU };
        let quad = matches!(self, ModelVariant::QuadOnly | ModelVariant::SOC);
        let norm = matches!(self, ModelVariant::NormOnly | ModelVariant::SOC);
        Architecture::backbone(d0, vec![width; depth], true, activation)
            .with_branches(if quad { vec![d0] } else { vec![] }, if norm { vec![d0] } else { vec![] })
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ReLU" => Ok(ModelVariant::ReLU),
            "Softplus" => Ok(ModelVariant::Softplus),
            "Quad" | "QuadOnly" => Ok(ModelVariant::QuadOnly),
            "Norm" | "NormOnly" => Ok(ModelVariant::NormOnly),
            "SOC" => Ok(ModelVariant::SOC),
            _ => Err(Error::UnknownName {
                name: s.into(),
                valid: "ReLU, Softplus, Quad (QuadOnly), Norm (NormOnly), SOC".into(),
            }),
        }
    }
}

pub const MAX_BUDGET_DEPTH: usize = 64;

/// Smallest backbone depth whose parameter count reaches `anchor_count`.
pub fn match_parameter_budget(anchor_count: usize, d0: usize, width: usize, variant: ModelVariant) -> Result<usize> {
    if anchor_count == 0 {
        return Err(Error::InvalidArgument("anchor parameter count must be positive".into()));
    }
    (1..=MAX_BUDGET_DEPTH)
        .find(|&depth| variant.architecture(d0, width, depth).parameter_count() >= anchor_count)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{variant} at width {width} cannot reach {anchor_count} parameters within depth {MAX_BUDGET_DEPTH}"
            ))
        })
}

/// Hidden width of the depth-2 anchor model for input dimension `d`.
///
/// 16, 20 and 24 for `d = 5, 10, 20`; other dimensions follow the
/// logarithmic trend of those three, `round(4·log2(d) + 6.7)`.
pub fn anchor_width(d: usize) -> usize {
    match d {
        5 => 16,
        10 => 20,
        20 => 24,
        _ => (4.0 * (d.max(1) as f64).log2() + 6.7).round().max(4.0) as usize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::targets::{make_target, TargetName};

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let t = make_target(TargetName::QuadraticIso, 2, 0).unwrap();
        let a = sample_uniform_dataset(&t, 2, 1000, -3.0, 3.0, 5).unwrap();
        assert_eq!(a, sample_uniform_dataset(&t, 2, 1000, -3.0, 3.0, 5).unwrap());
        assert!(a.xs.as_slice().iter().all(|v| (-3.0..=3.0).contains(v)));
        for i in 0..a.len() {
            let x = a.xs.row(i);
            assert_eq!(a.ys[i], 0.5 * (x[0] * x[0] + x[1] * x[1]));
        }
        assert!(sample_uniform_dataset(&t, 2, 0, -3.0, 3.0, 5).is_err());
        assert!(sample_uniform_dataset(&t, 2, 3, 1.0, 1.0, 5).is_err());
    }

    #[test]
    fn relative_error_examples() {
        let mut p = crate::model::test_models::zero_backbone(1);
        let data = Dataset::new(Matrix::from_rows(&[vec![1.0], vec![2.0]], 1).unwrap(), vec![2.0, 4.0]).unwrap();
        assert_eq!(relative_l2_error(&p, &data).unwrap(), 1.0);
        p.v = vec![2.0];
        assert_eq!(relative_l2_error(&p, &data).unwrap(), 0.0);
        p.v = vec![4.0];
        assert_eq!(relative_l2_error(&p, &data).unwrap(), 1.0);
        let zeros = Dataset::new(data.xs.clone(), vec![0.0, 0.0]).unwrap();
        assert!(relative_l2_error(&p, &zeros).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = make_target(TargetName::Mixed, 3, 2).unwrap();
        let data = sample_uniform_dataset(&t, 3, 50, -3.0, 3.0, 1).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,x2,y\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn budget_matching() {
        let d0 = 10;
        let width = 20;
        let soc2 = ModelVariant::SOC.architecture(d0, width, 2).parameter_count();
        assert_eq!(match_parameter_budget(soc2, d0, width, ModelVariant::SOC).unwrap(), 2);
        let relu2 = ModelVariant::ReLU.architecture(d0, width, 2).parameter_count();
        assert_eq!(match_parameter_budget(relu2 + 1, d0, width, ModelVariant::ReLU).unwrap(), 3);
        assert_eq!(match_parameter_budget(soc2, d0, width, ModelVariant::ReLU).unwrap(), 3);
        // 1491 is the depth-3 width-20 ReLU count at d = 10.
        assert_eq!(ModelVariant::ReLU.architecture(d0, width, 3).parameter_count(), 1491);
        assert!(match_parameter_budget(usize::MAX, d0, width, ModelVariant::ReLU).is_err());
        assert!(match_parameter_budget(0, d0, width, ModelVariant::ReLU).is_err());
    }

    #[test]
    fn counts_strictly_increase_with_depth() {
        for variant in ModelVariant::ALL {
            let counts: Vec<usize> =
                (1..=10).map(|depth| variant.architecture(7, 9, depth).parameter_count()).collect();
            assert!(counts.windows(2).all(|w| w[0] < w[1]), "{variant}: {counts:?}");
        }
    }

    #[test]
    fn variant_names() {
        for v in ModelVariant::ALL {
            assert_eq!(v.as_str().parse::<ModelVariant>().unwrap(), v);
        }
        assert_eq!("QuadOnly".parse::<ModelVariant>().unwrap(), ModelVariant::QuadOnly);
        assert!("Conv".parse::<ModelVariant>().is_err());
    }

    fn small_setup() -> (SocIcnnParams, Dataset, Dataset) {
        let t = make_target(TargetName::Huber, 3, 0).unwrap();
        let tr = sample_uniform_dataset(&t, 3, 200, -3.0, 3.0, 1).unwrap();
        let va = sample_uniform_dataset(&t, 3, 50, -3.0, 3.0, 2).unwrap();
        let p = init_model(&ModelVariant::SOC.architecture(3, 8, 2), 3).unwrap();
        (p, tr, va)
    }

    #[test]
    fn training_is_deterministic_and_feasible() {
        let (p, tr, va) = small_setup();
        let cfg = TrainConfig { epochs: 15, batch_size: 32, seed: 4, ..Default::default() };
        let (a, ha) = train(&p, &tr, &va, &cfg).unwrap();
        let (b, hb) = train(&p, &tr, &va, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert!(a.is_feasible());
        let best = ha.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(mse(&a, &va).unwrap(), best);
        assert!(ha.last().unwrap().train_loss < ha[0].train_loss);
    }

    #[test]
    fn exact_initial_model_stays_put() {
        let (p, tr, va) = small_setup();
        let relabel = |d: &Dataset| {
            let ys = (0..d.len()).map(|i| p.forward(d.xs.row(i)).unwrap().total).collect();
            Dataset::new(d.xs.clone(), ys).unwrap()
        };
        let (tr, va) = (relabel(&tr), relabel(&va));
        let cfg = TrainConfig { epochs: 5, batch_size: 32, ..Default::default() };
        let (trained, hist) = train(&p, &tr, &va, &cfg).unwrap();
        assert_eq!(hist[0].train_loss, 0.0);
        assert!(mse(&trained, &tr).unwrap() <= 1e-10);
    }

    #[test]
    fn rejects_bad_config() {
        let (p, tr, va) = small_setup();
        let cfg = TrainConfig { adam_beta1: 1.0, ..Default::default() };
        assert!(train(&p, &tr, &va, &cfg).is_err());
        let cfg = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(train(&p, &tr, &va, &cfg).is_err());
    }
}
