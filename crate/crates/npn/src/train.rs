//! Minibatch training with SGD and AdaDelta, dropout on propagated moments,
//! and evaluation routines: classification error with variance buckets,
//! regression RMSE with mean predictive standard deviation.

use crate::backprop::{backward, GradientSet, LayerGrads};
use crate::error::{NpnError, Result};
use crate::expfam::MomentPair;
use crate::matrix::Matrix;
use crate::network::{
    batch_loss, forward, init_params, predict, regularizer, Dropout, LayerParams, LossKind,
    NetworkSpec,
};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

fn default_decay() -> f64 {
    0.95
}

fn default_stabilizer() -> f64 {
    1e-6
}

/// Optimizer selection with its constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adadelta {
        #[serde(default = "default_decay")]
        decay: f64,
        #[serde(default = "default_stabilizer")]
        stabilizer: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adadelta {
            decay: default_decay(),
            stabilizer: default_stabilizer(),
        }
    }
}

fn default_lambda() -> f64 {
    1e-4
}

fn default_eval_every() -> usize {
    10
}

fn default_grad_clip() -> Option<f64> {
    Some(10.0)
}

/// Training-run configuration. `lambda_s` and `epsilon` override the
/// network's stored constants for the run so one config governs both.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_lambda")]
    pub lambda_s: f64,
    #[serde(default = "default_lambda")]
    pub epsilon: f64,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Global-norm clip; None disables (keep it off for gradient checks).
    #[serde(default = "default_grad_clip")]
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 || self.eval_every < 1 {
            return Err(NpnError::Config(
                "epochs, batch_size and eval_every must be at least 1".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NpnError::Config(format!(
                "dropout_rate {} outside [0,1)",
                self.dropout_rate
            )));
        }
        if self.lambda_s <= 0.0 || self.epsilon <= 0.0 {
            return Err(NpnError::Config(
                "lambda_s and epsilon must be positive".to_string(),
            ));
        }
        match self.optimizer {
            OptimizerKind::Sgd { lr, momentum } => {
                if lr <= 0.0 || !(0.0..1.0).contains(&momentum) {
                    return Err(NpnError::Config(format!(
                        "sgd needs lr > 0 and momentum in [0,1), got ({lr}, {momentum})"
                    )));
                }
            }
            OptimizerKind::Adadelta { decay, stabilizer } => {
                if !(0.0..1.0).contains(&decay) || decay == 0.0 || stabilizer <= 0.0 {
                    return Err(NpnError::Config(format!(
                        "adadelta needs decay in (0,1) and stabilizer > 0, got ({decay}, {stabilizer})"
                    )));
                }
            }
        }
        if let Some(c) = self.grad_clip {
            if c <= 0.0 {
                return Err(NpnError::Config(format!("grad_clip {c} must be positive")));
            }
        }
        Ok(())
    }
}

fn zero_slots(params: &[LayerParams]) -> Vec<LayerGrads> {
    params
        .iter()
        .map(|p| LayerGrads {
            w_c: Matrix::zeros(p.w_c.raw.rows(), p.w_c.raw.cols()),
            w_d: Matrix::zeros(p.w_d.raw.rows(), p.w_d.raw.cols()),
            b_c: Matrix::zeros(p.b_c.raw.rows(), p.b_c.raw.cols()),
            b_d: Matrix::zeros(p.b_d.raw.rows(), p.b_d.raw.cols()),
        })
        .collect()
}

/// Per-parameter optimizer accumulators, shapes mirroring the parameters.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    Sgd { velocity: Vec<LayerGrads> },
    Adadelta { eg2: Vec<LayerGrads>, ed2: Vec<LayerGrads> },
}

impl OptimizerState {
    pub fn new(kind: &OptimizerKind, params: &[LayerParams]) -> Self {
        match kind {
            OptimizerKind::Sgd { .. } => OptimizerState::Sgd {
                velocity: zero_slots(params),
            },
            OptimizerKind::Adadelta { .. } => OptimizerState::Adadelta {
                eg2: zero_slots(params),
                ed2: zero_slots(params),
            },
        }
    }
}

/// v <- momentum v + g; theta <- theta - lr v, in raw space.
pub fn sgd_step(
    params: &mut [LayerParams],
    grads: &GradientSet,
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
) {
    let OptimizerState::Sgd { velocity } = state else {
        panic!("optimizer state does not match sgd");
    };
    for ((p, g), v) in params.iter_mut().zip(&grads.layers).zip(velocity) {
        for ((pm, gm), vm) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            for i in 0..vm.len() {
                let vi = momentum * vm.data()[i] + gm.data()[i];
                vm.data_mut()[i] = vi;
                pm.raw.data_mut()[i] -= lr * vi;
            }
            pm.refresh();
        }
    }
}

/// Eg2 <- rho Eg2 + (1-rho) g^2; delta = -sqrt(Ed2+st)/sqrt(Eg2+st) g;
/// Ed2 <- rho Ed2 + (1-rho) delta^2; theta <- theta + delta. The step uses
/// the freshly updated Eg2 and the previous Ed2.
pub fn adadelta_step(
    params: &mut [LayerParams],
    grads: &GradientSet,
    state: &mut OptimizerState,
    decay: f64,
    stabilizer: f64,
) {
    let OptimizerState::Adadelta { eg2, ed2 } = state else {
        panic!("optimizer state does not match adadelta");
    };
    for (((p, g), e), d) in params.iter_mut().zip(&grads.layers).zip(eg2).zip(ed2) {
        for (((pm, gm), em), dm) in p.iter_mut().zip(g.iter()).zip(e.iter_mut()).zip(d.iter_mut())
        {
            for i in 0..em.len() {
                let gi = gm.data()[i];
                let eg = decay * em.data()[i] + (1.0 - decay) * gi * gi;
                em.data_mut()[i] = eg;
                let delta = -((dm.data()[i] + stabilizer).sqrt() / (eg + stabilizer).sqrt()) * gi;
                dm.data_mut()[i] = decay * dm.data()[i] + (1.0 - decay) * delta * delta;
                pm.raw.data_mut()[i] += delta;
            }
            pm.refresh();
        }
    }
}

fn optimizer_step(
    params: &mut [LayerParams],
    grads: &GradientSet,
    state: &mut OptimizerState,
    kind: &OptimizerKind,
) {
    match *kind {
        OptimizerKind::Sgd { lr, momentum } => sgd_step(params, grads, state, lr, momentum),
        OptimizerKind::Adadelta { decay, stabilizer } => {
            adadelta_step(params, grads, state, decay, stabilizer)
        }
    }
}

/// Observed inputs with their targets. Targets are real vectors for
/// regression heads and one-hot rows for the cross-entropy head.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(NpnError::shape(
                "dataset",
                format!("{} input rows vs {} target rows", x.rows(), y.rows()),
            ));
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.gather_rows(idx),
            y: self.y.gather_rows(idx),
        }
    }
}

/// One epoch's summary row.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-example training loss over the epoch.
    pub loss: f64,
    /// Mean per-batch regularizer contribution (KL scaled by 1/N).
    pub reg: f64,
    /// Error rate (classification) or RMSE (regression) on the evaluation
    /// set, at eval_every boundaries and on the final epoch.
    pub metric: Option<f64>,
    pub seconds: f64,
}

fn layer_norms(params: &[LayerParams]) -> String {
    let norms: Vec<String> = params
        .iter()
        .map(|p| {
            let sq: f64 = p.iter().map(|pm| pm.value.sq_norm()).sum();
            format!("{:.3e}", sq.sqrt())
        })
        .collect();
    norms.join(", ")
}

/// The evaluation metric matching the network's head: classification error
/// rate for cross-entropy, RMSE otherwise.
pub fn eval_metric(spec: &NetworkSpec, params: &[LayerParams], data: &Dataset) -> Result<f64> {
    match spec.loss {
        LossKind::CrossEntropy => {
            Ok(eval_classification(spec, params, data, DEFAULT_BUCKET_WIDTH)?.error_rate)
        }
        _ => Ok(eval_regression(spec, params, data)?.0),
    }
}

/// Seeded minibatch training from a fresh initialization. Deterministic:
/// the same (spec, data, config) produces bit-identical parameters and
/// metrics apart from wall time.
pub fn train_loop(
    spec: &NetworkSpec,
    data: &Dataset,
    config: &TrainConfig,
    eval_data: Option<&Dataset>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(Vec<LayerParams>, Vec<EpochMetrics>)> {
    config.validate()?;
    let mut spec = spec.clone();
    spec.lambda_s = config.lambda_s;
    spec.epsilon = config.epsilon;
    spec.validate()?;
    if data.is_empty() {
        return Err(NpnError::Config("training set is empty".to_string()));
    }
    if data.x.cols() != spec.in_dim() || data.y.cols() != spec.out_dim() {
        return Err(NpnError::shape(
            "train",
            format!(
                "data is {}x{} -> {}x{} but the network is {} -> {}",
                data.x.rows(),
                data.x.cols(),
                data.y.rows(),
                data.y.cols(),
                spec.in_dim(),
                spec.out_dim()
            ),
        ));
    }

    let n = data.len();
    let reg_scale = 1.0 / n as f64;
    let mut params = init_params(&spec, config.seed)?;
    let mut state = OptimizerState::new(&config.optimizer, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut indices: Vec<usize> = (0..n).collect();

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut reg_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in indices.chunks(config.batch_size).enumerate() {
            let xb = data.x.gather_rows(chunk);
            let yb = data.y.gather_rows(chunk);
            let x = MomentPair::new(xb, Matrix::zeros(chunk.len(), data.x.cols()));
            let fp = if config.dropout_rate > 0.0 {
                forward(
                    &spec,
                    &params,
                    &x,
                    Some(Dropout {
                        rate: config.dropout_rate,
                        rng: &mut rng,
                    }),
                )?
            } else {
                forward(&spec, &params, &x, None)?
            };
            let bl = batch_loss(&spec, &fp, &yb)?;
            if !bl.is_finite() {
                return Err(NpnError::NonFinite {
                    what: "train",
                    detail: format!(
                        "loss {bl} at epoch {epoch} batch {bi}; layer norms [{}]",
                        layer_norms(&params)
                    ),
                });
            }
            let mut grads = backward(&spec, &params, &fp, &yb, reg_scale)?;
            if let Some(clip) = config.grad_clip {
                let gn = grads.global_norm();
                if gn > clip {
                    grads.scale_inplace(clip / gn);
                }
            }
            optimizer_step(&mut params, &grads, &mut state, &config.optimizer);
            loss_sum += bl * chunk.len() as f64;
            reg_sum += reg_scale * regularizer(&spec, &params).0;
            batches += 1;
        }
        let metric = match eval_data {
            Some(ev) if epoch % config.eval_every == 0 || epoch == config.epochs => {
                Some(eval_metric(&spec, &params, ev)?)
            }
            _ => None,
        };
        let row = EpochMetrics {
            epoch,
            loss: loss_sum / n as f64,
            reg: reg_sum / batches as f64,
            metric,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        metrics.push(row);
    }
    Ok((params, metrics))
}

/// Figure-style variance bucketing: bucket k (1-based) collects items whose
/// total output variance lies in [(k-1) width, k width).
pub const DEFAULT_BUCKET_WIDTH: f64 = 0.04;

pub fn bucket_index(total_variance: f64, width: f64) -> usize {
    (total_variance / width).floor() as usize + 1
}

/// One variance bucket's accuracy row.
#[derive(Debug, Clone, Serialize)]
pub struct BucketRow {
    pub bucket: usize,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Classification evaluation: overall error rate plus per-bucket accuracy,
/// bucketing test items by total output variance.
#[derive(Debug, Clone, Serialize)]
pub struct ClassificationEval {
    pub error_rate: f64,
    pub buckets: Vec<BucketRow>,
}

const EVAL_CHUNK: usize = 2048;

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn eval_classification(
    spec: &NetworkSpec,
    params: &[LayerParams],
    data: &Dataset,
    bucket_width: f64,
) -> Result<ClassificationEval> {
    if data.is_empty() {
        return Err(NpnError::Config("evaluation set is empty".to_string()));
    }
    if bucket_width <= 0.0 {
        return Err(NpnError::Config(format!(
            "bucket width {bucket_width} must be positive"
        )));
    }
    let mut wrong = 0usize;
    let mut table: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let cols = data.x.cols();
    let out = data.y.cols();
    for lo in (0..data.len()).step_by(EVAL_CHUNK) {
        let hi = (lo + EVAL_CHUNK).min(data.len());
        let x = MomentPair::new(
            data.x.slice_rows(lo, hi),
            Matrix::zeros(hi - lo, cols),
        );
        let p = predict(spec, params, &x)?;
        for i in 0..hi - lo {
            let pred = argmax(&p.m.data()[i * out..(i + 1) * out]);
            let label = argmax(&data.y.data()[(lo + i) * out..(lo + i + 1) * out]);
            let ok = pred == label;
            if !ok {
                wrong += 1;
            }
            let v: f64 = p.s.data()[i * out..(i + 1) * out].iter().sum();
            let e = table.entry(bucket_index(v, bucket_width)).or_insert((0, 0));
            e.0 += 1;
            if ok {
                e.1 += 1;
            }
        }
    }
    let buckets = table
        .into_iter()
        .map(|(bucket, (count, correct))| BucketRow {
            bucket,
            count,
            correct,
            accuracy: correct as f64 / count as f64,
        })
        .collect();
    Ok(ClassificationEval {
        error_rate: wrong as f64 / data.len() as f64,
        buckets,
    })
}

/// Regression evaluation: (RMSE of predicted means, mean predictive std).
pub fn eval_regression(
    spec: &NetworkSpec,
    params: &[LayerParams],
    data: &Dataset,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(NpnError::Config("evaluation set is empty".to_string()));
    }
    let mut sq_sum = 0.0;
    let mut std_sum = 0.0;
    let cols = data.x.cols();
    for lo in (0..data.len()).step_by(EVAL_CHUNK) {
        let hi = (lo + EVAL_CHUNK).min(data.len());
        let x = MomentPair::new(
            data.x.slice_rows(lo, hi),
            Matrix::zeros(hi - lo, cols),
        );
        let p = predict(spec, params, &x)?;
        let yb = data.y.slice_rows(lo, hi);
        for i in 0..p.m.len() {
            let d = p.m.data()[i] - yb.data()[i];
            sq_sum += d * d;
            std_sum += p.s.data()[i].max(0.0).sqrt();
        }
    }
    let count = (data.len() * data.y.cols()) as f64;
    Ok(((sq_sum / count).sqrt(), std_sum / count))
}

/// Scalar standardization (targets): fitted mean and standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Standardizer {
            mean,
            std: var.sqrt().max(1e-12),
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Per-column feature standardization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnStandardizer {
    pub columns: Vec<Standardizer>,
}

impl ColumnStandardizer {
    pub fn fit(x: &Matrix) -> Self {
        let columns = (0..x.cols())
            .map(|j| {
                let col: Vec<f64> = (0..x.rows()).map(|i| x.at(i, j)).collect();
                Standardizer::fit(&col)
            })
            .collect();
        ColumnStandardizer { columns }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols(), self.columns.len(), "column count mismatch");
        Matrix::from_fn(x.rows(), x.cols(), |i, j| self.columns[j].apply(x.at(i, j)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::FamilyTag;
    use crate::moments::ActivationKind;
    use crate::network::{dropout_mask, LayerSpec, ParamMatrix, ParamTransform};

    fn scalar_params(v: f64) -> Vec<LayerParams> {
        vec![LayerParams {
            w_c: ParamMatrix::from_value(Matrix::row_vec(vec![v]), ParamTransform::Direct),
            w_d: ParamMatrix::from_value(Matrix::row_vec(vec![0.0]), ParamTransform::Direct),
            b_c: ParamMatrix::from_value(Matrix::row_vec(vec![0.0]), ParamTransform::Direct),
            b_d: ParamMatrix::from_value(Matrix::row_vec(vec![0.0]), ParamTransform::Direct),
        }]
    }

    fn unit_grads(g: f64) -> GradientSet {
        GradientSet {
            layers: vec![LayerGrads {
                w_c: Matrix::row_vec(vec![g]),
                w_d: Matrix::row_vec(vec![0.0]),
                b_c: Matrix::row_vec(vec![0.0]),
                b_d: Matrix::row_vec(vec![0.0]),
            }],
        }
    }

    #[test]
    fn sgd_step_examples() {
        let mut params = scalar_params(1.0);
        let kind = OptimizerKind::Sgd { lr: 0.1, momentum: 0.0 };
        let mut state = OptimizerState::new(&kind, &params);
        sgd_step(&mut params, &unit_grads(1.0), &mut state, 0.1, 0.0);
        assert!((params[0].w_c.value.at(0, 0) - 0.9).abs() < 1e-15);
        sgd_step(&mut params, &unit_grads(0.0), &mut state, 0.1, 0.0);
        assert!((params[0].w_c.value.at(0, 0) - 0.9).abs() < 1e-15);

        // Momentum builds velocity 1, then 1.9.
        let mut params = scalar_params(0.0);
        let mut state = OptimizerState::new(&kind, &params);
        sgd_step(&mut params, &unit_grads(1.0), &mut state, 0.1, 0.9);
        sgd_step(&mut params, &unit_grads(1.0), &mut state, 0.1, 0.9);
        let OptimizerState::Sgd { velocity } = &state else { unreachable!() };
        assert!((velocity[0].w_c.at(0, 0) - 1.9).abs() < 1e-15);
        assert!((params[0].w_c.value.at(0, 0) + 0.1 * (1.0 + 1.9)).abs() < 1e-15);
    }

    #[test]
    fn adadelta_step_examples() {
        let mut params = scalar_params(0.0);
        let kind = OptimizerKind::Adadelta { decay: 0.95, stabilizer: 1e-6 };
        let mut state = OptimizerState::new(&kind, &params);
        adadelta_step(&mut params, &unit_grads(1.0), &mut state, 0.95, 1e-6);
        let expect = -(1e-6f64).sqrt() / (0.05 + 1e-6f64).sqrt();
        assert!((params[0].w_c.value.at(0, 0) - expect).abs() < 1e-15);
        assert!((expect + 0.004472).abs() < 1e-6);

        let before = params[0].w_c.value.at(0, 0);
        adadelta_step(&mut params, &unit_grads(0.0), &mut state, 0.95, 1e-6);
        assert_eq!(params[0].w_c.value.at(0, 0), before);

        // Steps always oppose the gradient sign.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let g: f64 = rng.gen_range(-2.0..2.0);
            if g == 0.0 {
                continue;
            }
            let before = params[0].w_c.value.at(0, 0);
            adadelta_step(&mut params, &unit_grads(g), &mut state, 0.95, 1e-6);
            let delta = params[0].w_c.value.at(0, 0) - before;
            assert!(delta * g < 0.0, "delta {delta} vs g {g}");
        }
    }

    #[test]
    fn dropout_mask_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = dropout_mask(10, 10, 0.0, &mut rng);
        assert!(m.data().iter().all(|&v| v == 1.0));
        let m = dropout_mask(200, 100, 0.3, &mut rng);
        let keep_val = 1.0 / 0.7;
        assert!(m.data().iter().all(|&v| v == 0.0 || (v - keep_val).abs() < 1e-15));
        // Inverted scaling keeps the mask mean near 1.
        let mean = m.data().iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    fn toy_spec() -> NetworkSpec {
        NetworkSpec {
            layers: vec![LayerSpec {
                fan_in: 1,
                fan_out: 1,
                family: FamilyTag::Gaussian,
                activation: ActivationKind::Identity,
                r: 0.0,
                tau: 0.0,
            }],
            loss: LossKind::GaussKl,
            lambda_s: 1e-4,
            epsilon: 1e-4,
        }
    }

    fn toy_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            optimizer: OptimizerKind::default(),
            lambda_s: 1e-4,
            epsilon: 1e-4,
            dropout_rate: 0.0,
            seed: 7,
            eval_every: 10,
            grad_clip: Some(10.0),
        }
    }

    #[test]
    fn train_loop_decreases_loss_on_linear_toy() {
        let data = Dataset::new(
            Matrix::from_vec(2, 1, vec![0.0, 1.0]),
            Matrix::from_vec(2, 1, vec![0.5, 1.5]),
        )
        .unwrap();
        let (_, metrics) =
            train_loop(&toy_spec(), &data, &toy_config(50), None, |_| {}).unwrap();
        assert_eq!(metrics.len(), 50);
        for w in metrics.windows(2) {
            assert!(
                w[1].loss < w[0].loss,
                "loss stalled: {} -> {}",
                w[0].loss,
                w[1].loss
            );
        }
    }

    #[test]
    fn train_loop_is_deterministic() {
        let data = Dataset::new(
            Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]),
            Matrix::from_vec(4, 1, vec![0.1, 0.9, 2.2, 2.8]),
        )
        .unwrap();
        let mut cfg = toy_config(12);
        cfg.dropout_rate = 0.0;
        let (p1, m1) = train_loop(&toy_spec(), &data, &cfg, Some(&data), |_| {}).unwrap();
        let (p2, m2) = train_loop(&toy_spec(), &data, &cfg, Some(&data), |_| {}).unwrap();
        for (a, b) in m1.iter().zip(&m2) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert_eq!(a.reg.to_bits(), b.reg.to_bits());
            assert_eq!(a.metric.map(f64::to_bits), b.metric.map(f64::to_bits));
        }
        for (a, b) in p1.iter().zip(&p2) {
            for (ma, mb) in a.iter().zip(b.iter()) {
                assert_eq!(ma.raw.data(), mb.raw.data());
            }
        }
    }

    #[test]
    fn large_lambda_shrinks_weight_means() {
        let data = Dataset::new(
            Matrix::from_vec(4, 1, vec![-1.0, 0.0, 1.0, 2.0]),
            Matrix::from_vec(4, 1, vec![-2.0, 0.0, 2.0, 4.0]),
        )
        .unwrap();
        let run = |lambda: f64| {
            let mut cfg = toy_config(80);
            cfg.lambda_s = lambda;
            let (p, _) = train_loop(&toy_spec(), &data, &cfg, None, |_| {}).unwrap();
            p[0].w_c.value.at(0, 0).abs()
        };
        let small = run(1e-4);
        let large = run(50.0);
        assert!(large < small, "|w| {large} !< {small}");
    }

    #[test]
    fn train_rejects_bad_shapes_and_configs() {
        let data = Dataset::new(
            Matrix::from_vec(2, 2, vec![0.0; 4]),
            Matrix::from_vec(2, 1, vec![0.0; 2]),
        )
        .unwrap();
        assert!(train_loop(&toy_spec(), &data, &toy_config(1), None, |_| {}).is_err());
        let mut cfg = toy_config(1);
        cfg.dropout_rate = 1.0;
        assert!(cfg.validate().is_err());
        cfg.dropout_rate = 0.0;
        cfg.optimizer = OptimizerKind::Sgd { lr: 0.0, momentum: 0.0 };
        assert!(cfg.validate().is_err());
    }

    fn two_class_dataset() -> Dataset {
        Dataset::new(
            Matrix::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]),
            Matrix::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]),
        )
        .unwrap()
    }

    fn two_class_net(flip: bool) -> (NetworkSpec, Vec<LayerParams>) {
        let spec = NetworkSpec {
            layers: vec![LayerSpec {
                fan_in: 2,
                fan_out: 2,
                family: FamilyTag::Gaussian,
                activation: ActivationKind::Sigmoid,
                r: 0.0,
                tau: 0.0,
            }],
            loss: LossKind::CrossEntropy,
            lambda_s: 1e-4,
            epsilon: 1e-4,
        };
        let sign = if flip { -1.0 } else { 1.0 };
        let params = vec![LayerParams {
            w_c: ParamMatrix::from_value(
                Matrix::from_vec(2, 2, vec![5.0 * sign, -5.0 * sign, -5.0 * sign, 5.0 * sign]),
                ParamTransform::Direct,
            ),
            w_d: ParamMatrix::from_value(Matrix::zeros(2, 2), ParamTransform::Direct),
            b_c: ParamMatrix::from_value(Matrix::zeros(1, 2), ParamTransform::Direct),
            b_d: ParamMatrix::from_value(
                Matrix::from_vec(1, 2, vec![0.02, 0.07]),
                ParamTransform::Direct,
            ),
        }];
        (spec, params)
    }

    #[test]
    fn classification_eval_error_rate_and_buckets() {
        let data = two_class_dataset();
        let (spec, params) = two_class_net(false);
        let ev = eval_classification(&spec, &params, &data, DEFAULT_BUCKET_WIDTH).unwrap();
        assert_eq!(ev.error_rate, 0.0);
        let (spec, params) = two_class_net(true);
        let ev = eval_classification(&spec, &params, &data, DEFAULT_BUCKET_WIDTH).unwrap();
        assert_eq!(ev.error_rate, 1.0);

        assert_eq!(bucket_index(0.05, 0.04), 2);
        assert_eq!(bucket_index(0.0, 0.04), 1);
        assert_eq!(bucket_index(0.039999, 0.04), 1);
    }

    #[test]
    fn bucket_accuracies_average_to_overall() {
        // A half-trained net on noisy data: bucket counts weighted by
        // accuracy must reproduce the overall accuracy exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let n = 64;
        let x = Matrix::from_fn(n, 2, |_, _| rng.gen_range(-2.0..2.0));
        let y = Matrix::from_fn(n, 2, |i, j| {
            let label = (x.at(i, 0) + 0.3 * rng.gen_range(-1.0..1.0) > 0.0) as usize;
            (j == label) as usize as f64
        });
        let data = Dataset::new(x, y).unwrap();
        let spec = two_class_net(false).0;
        let params = init_params(&spec, 3).unwrap();
        let ev = eval_classification(&spec, &params, &data, 0.01).unwrap();
        let weighted: f64 = ev.buckets.iter().map(|b| b.correct as f64).sum();
        let total: usize = ev.buckets.iter().map(|b| b.count).sum();
        assert_eq!(total, n);
        assert!((weighted / n as f64 - (1.0 - ev.error_rate)).abs() < 1e-12);
    }

    #[test]
    fn regression_eval_examples() {
        let spec = toy_spec();
        let mk = |w: f64, b: f64, bd: f64| {
            vec![LayerParams {
                w_c: ParamMatrix::from_value(Matrix::row_vec(vec![w]), ParamTransform::Direct),
                w_d: ParamMatrix::from_value(Matrix::row_vec(vec![0.0]), ParamTransform::Direct),
                b_c: ParamMatrix::from_value(Matrix::row_vec(vec![b]), ParamTransform::Direct),
                b_d: ParamMatrix::from_value(Matrix::row_vec(vec![bd]), ParamTransform::Direct),
            }]
        };
        let data = Dataset::new(
            Matrix::from_vec(3, 1, vec![0.0, 1.0, 2.0]),
            Matrix::from_vec(3, 1, vec![0.0, 1.0, 2.0]),
        )
        .unwrap();
        let (rmse, std) = eval_regression(&spec, &mk(1.0, 0.0, 0.25), &data).unwrap();
        assert!(rmse.abs() < 1e-15);
        assert!((std - 0.5) < 1e-12);
        let (rmse, _) = eval_regression(&spec, &mk(1.0, 0.75, 0.25), &data).unwrap();
        assert!((rmse - 0.75).abs() < 1e-12);
    }

    #[test]
    fn standardizer_roundtrip() {
        let vals = [2.0, 4.0, 6.0, 8.0];
        let st = Standardizer::fit(&vals);
        assert!((st.mean - 5.0).abs() < 1e-15);
        let z: Vec<f64> = vals.iter().map(|v| st.apply(*v)).collect();
        let back: Vec<f64> = z.iter().map(|v| st.invert(*v)).collect();
        for (a, b) in vals.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        let zm = z.iter().sum::<f64>() / 4.0;
        let zv = z.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(zm.abs() < 1e-15 && (zv - 1.0).abs() < 1e-12);

        let x = Matrix::from_vec(4, 2, vec![2.0, 10.0, 4.0, 20.0, 6.0, 30.0, 8.0, 40.0]);
        let cs = ColumnStandardizer::fit(&x);
        let z = cs.transform(&x);
        for j in 0..2 {
            let mean: f64 = (0..4).map(|i| z.at(i, j)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-14);
        }
    }
}
