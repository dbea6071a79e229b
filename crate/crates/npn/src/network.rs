//! Network structure: layer/loss specification, parameter storage with
//! positivity reparameterization, deterministic initialization, the
//! moment-propagating forward pass, losses, and KL regularizers.
//!
//! Conventions. A layer carries two proxy-parameter matrices per weight
//! (`w_c`, `w_d`) and per bias (`b_c`, `b_d`). Gaussian layers use Gaussian
//! weights (c unconstrained, d softplus-reparameterized); gamma and Poisson
//! layers use gamma weights (both proxies softplus-reparameterized).
//! The forward pass propagates a `MomentPair` (a_m, a_s): the linear map
//! produces output moments (o_m, o_s), the family mapping converts them to
//! proxy parameters where the family is not Gaussian, and the activation
//! produces the next layer's input moments in closed form.

use crate::error::{NpnError, Result};
use crate::expfam::{self, FamilyTag, MomentPair, PoissonFitResult};
use crate::matrix::Matrix;
use crate::moments::{self, ActivationKind, ActivationSpec};
use crate::special::{digamma, log_gamma, sigmoid, softplus, softplus_inv, LN_2PI};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Floor applied to variances before they are inverted or logged: gamma
/// moment inversion, Poisson rate fitting, and gauss_kl consumption.
pub const VAR_FLOOR: f64 = 1e-12;

/// How a parameter matrix's stored raw values map to its constrained values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamTransform {
    /// value = raw (unconstrained).
    Direct,
    /// value = softplus(raw) > 0.
    Softplus,
}

/// A parameter matrix stored in raw (optimizer) space alongside its
/// constrained value; `refresh` must follow any raw-space update.
#[derive(Debug, Clone)]
pub struct ParamMatrix {
    pub raw: Matrix,
    pub value: Matrix,
    pub transform: ParamTransform,
}

impl ParamMatrix {
    pub fn from_value(value: Matrix, transform: ParamTransform) -> Self {
        let raw = match transform {
            ParamTransform::Direct => value.clone(),
            ParamTransform::Softplus => value.map(softplus_inv),
        };
        ParamMatrix { raw, value, transform }
    }

    pub fn from_raw(raw: Matrix, transform: ParamTransform) -> Self {
        let value = match transform {
            ParamTransform::Direct => raw.clone(),
            ParamTransform::Softplus => raw.map(softplus),
        };
        ParamMatrix { raw, value, transform }
    }

    /// Recompute `value` after a raw-space update.
    pub fn refresh(&mut self) {
        match self.transform {
            ParamTransform::Direct => self.value = self.raw.clone(),
            ParamTransform::Softplus => self.value = self.raw.map(softplus),
        }
    }

    /// Chain a gradient w.r.t. `value` back to raw space:
    /// d(softplus)/d(raw) = sigmoid(raw).
    pub fn chain_grad(&self, dvalue: &Matrix) -> Matrix {
        match self.transform {
            ParamTransform::Direct => dvalue.clone(),
            ParamTransform::Softplus => dvalue.zip_map(&self.raw, |g, r| g * sigmoid(r)),
        }
    }
}

/// One layer's four parameter matrices (weight and bias proxy pairs).
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub w_c: ParamMatrix,
    pub w_d: ParamMatrix,
    pub b_c: ParamMatrix,
    pub b_d: ParamMatrix,
}

impl LayerParams {
    pub fn iter(&self) -> impl Iterator<Item = &ParamMatrix> {
        [&self.w_c, &self.w_d, &self.b_c, &self.b_d].into_iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamMatrix> {
        [&mut self.w_c, &mut self.w_d, &mut self.b_c, &mut self.b_d].into_iter()
    }
}

/// Loss heads. Each pins the legal family/activation of the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    GaussKl,
    GammaNll,
    PoissonNll,
    CrossEntropy,
}

/// One layer of the architecture. `r`/`tau` are the saturating-activation
/// constants and default to 0 for the Gaussian activations that ignore them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub family: FamilyTag,
    pub activation: ActivationKind,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub tau: f64,
}

impl LayerSpec {
    /// The validated ActivationSpec this layer evaluates.
    pub fn activation_spec(&self) -> Result<ActivationSpec> {
        let spec = match self.activation {
            ActivationKind::Sigmoid => ActivationSpec::sigmoid(),
            ActivationKind::Tanh => ActivationSpec::tanh(),
            ActivationKind::Relu => ActivationSpec::relu(),
            ActivationKind::Identity => ActivationSpec::identity(),
            ActivationKind::ExpSaturating => ActivationSpec::exp_sat(self.r, self.tau)?,
            other => {
                return Err(NpnError::Config(format!(
                    "{other:?} is an oracle-path activation, not a layer activation"
                )))
            }
        };
        spec.check_family(self.family)?;
        Ok(spec)
    }

    /// Family of this layer's weight distributions.
    pub fn weight_family(&self) -> FamilyTag {
        match self.family {
            FamilyTag::Gaussian => FamilyTag::Gaussian,
            _ => FamilyTag::Gamma,
        }
    }
}

fn default_reg() -> f64 {
    1e-4
}

/// Full architecture plus loss-side constants. `lambda_s` is the prior
/// precision-like constant of the KL regularizers; `epsilon` is the target
/// output variance of the gauss_kl loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
    #[serde(default = "default_reg")]
    pub lambda_s: f64,
    #[serde(default = "default_reg")]
    pub epsilon: f64,
}

impl NetworkSpec {
    /// Structural validation: nonempty, chained fan sizes, supported layer
    /// families, per-layer activation compatibility, and the loss head's
    /// family/activation contract.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(NpnError::Config("network has no layers".into()));
        }
        if !(self.lambda_s > 0.0) || !(self.epsilon > 0.0) {
            return Err(NpnError::Config(format!(
                "lambda_s and epsilon must be > 0; got {} and {}",
                self.lambda_s, self.epsilon
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.fan_in == 0 || l.fan_out == 0 {
                return Err(NpnError::Config(format!("layer {i}: zero fan size")));
            }
            if matches!(l.family, FamilyTag::Beta | FamilyTag::Rayleigh) {
                return Err(NpnError::Config(format!(
                    "layer {i}: {} is not a layer family",
                    l.family
                )));
            }
            l.activation_spec()
                .map_err(|e| NpnError::Config(format!("layer {i}: {e}")))?;
            if i + 1 < self.layers.len() {
                let next = &self.layers[i + 1];
                if l.fan_out != next.fan_in {
                    return Err(NpnError::Config(format!(
                        "layer {i} fan_out {} != layer {} fan_in {}",
                        l.fan_out,
                        i + 1,
                        next.fan_in
                    )));
                }
            }
        }
        let last = self.layers.last().unwrap();
        let want: (FamilyTag, ActivationKind) = match self.loss {
            LossKind::GaussKl => (FamilyTag::Gaussian, ActivationKind::Identity),
            LossKind::CrossEntropy => (FamilyTag::Gaussian, ActivationKind::Sigmoid),
            LossKind::GammaNll => (FamilyTag::Gamma, ActivationKind::Identity),
            LossKind::PoissonNll => (FamilyTag::Poisson, ActivationKind::Identity),
        };
        if (last.family, last.activation) != want {
            return Err(NpnError::Config(format!(
                "loss {:?} requires last layer {:?} + {:?}; got {:?} + {:?}",
                self.loss, want.0, want.1, last.family, last.activation
            )));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.fan_in).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }
}

/// Deterministic parameter initialization. Gaussian layers: W_c uniform in
/// +-sqrt(6/(fan_in+fan_out)), W_d = 1e-4, b_c = 0, b_d = 1e-4. Gamma-weight
/// layers: mean |glorot| + 0.1 and variance 1e-4, converted to proxy
/// parameters by moment inversion; bias mean 0.1, variance 1e-4.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<Vec<LayerParams>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.layers.len());
    for l in &spec.layers {
        let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
        let glorot = Matrix::from_fn(l.fan_in, l.fan_out, |_, _| rng.gen_range(-bound..bound));
        let lp = match l.weight_family() {
            FamilyTag::Gaussian => LayerParams {
                w_c: ParamMatrix::from_value(glorot, ParamTransform::Direct),
                w_d: ParamMatrix::from_value(
                    Matrix::filled(l.fan_in, l.fan_out, 1e-4),
                    ParamTransform::Softplus,
                ),
                b_c: ParamMatrix::from_value(
                    Matrix::zeros(1, l.fan_out),
                    ParamTransform::Direct,
                ),
                b_d: ParamMatrix::from_value(
                    Matrix::filled(1, l.fan_out, 1e-4),
                    ParamTransform::Softplus,
                ),
            },
            FamilyTag::Gamma => {
                let w_m = glorot.map(|v| v.abs() + 0.1);
                let w_s = Matrix::filled(l.fan_in, l.fan_out, 1e-4);
                let wp = expfam::from_moments(
                    FamilyTag::Gamma,
                    &MomentPair::new(w_m, w_s),
                )?;
                let bp = expfam::from_moments(
                    FamilyTag::Gamma,
                    &MomentPair::new(
                        Matrix::filled(1, l.fan_out, 0.1),
                        Matrix::filled(1, l.fan_out, 1e-4),
                    ),
                )?;
                LayerParams {
                    w_c: ParamMatrix::from_value(wp.c, ParamTransform::Softplus),
                    w_d: ParamMatrix::from_value(wp.d, ParamTransform::Softplus),
                    b_c: ParamMatrix::from_value(bp.c, ParamTransform::Softplus),
                    b_d: ParamMatrix::from_value(bp.d, ParamTransform::Softplus),
                }
            }
            other => unreachable!("weight family {other} cannot arise"),
        };
        out.push(lp);
    }
    Ok(out)
}

/// Weight-distribution moments (W_m, W_s) from the stored proxy values.
pub fn weight_moments(family: FamilyTag, w_c: &Matrix, w_d: &Matrix) -> (Matrix, Matrix) {
    match family {
        FamilyTag::Gaussian => (w_c.clone(), w_d.clone()),
        FamilyTag::Gamma => (
            w_c.zip_map(w_d, |c, d| c / d),
            w_c.zip_map(w_d, |c, d| c / (d * d)),
        ),
        other => unreachable!("weight family {other} cannot arise"),
    }
}

/// The probabilistic linear transformation on moments:
/// o_m = a_m W_m + b_m,
/// o_s = a_s (W_s + W_m o W_m) + (a_m o a_m) W_s + b_s.
pub fn linear_forward(
    a_m: &Matrix,
    a_s: &Matrix,
    w_m: &Matrix,
    w_s: &Matrix,
    b_m: &Matrix,
    b_s: &Matrix,
) -> (Matrix, Matrix) {
    let mut o_m = a_m.matmul(w_m);
    o_m.add_row_broadcast(b_m);
    let w_m_sq = w_m.hadamard(w_m);
    let a_m_sq = a_m.hadamard(a_m);
    let mut o_s = a_s.matmul(&w_s.add(&w_m_sq));
    o_s.add_assign(&a_m_sq.matmul(w_s));
    o_s.add_row_broadcast(b_s);
    (o_m, o_s)
}

/// Everything the backward pass needs about one layer's forward evaluation.
/// `in_mean`/`in_var` are the moments actually consumed (post-dropout);
/// `lin_mean`/`lin_var` are (o_m, o_s); `nat_c`/`nat_d` are the family proxy
/// parameters (equal to the linear moments for Gaussian layers; `nat_d` is
/// empty for Poisson); `act_mean`/`act_var` are pre-dropout activations.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub in_mean: Matrix,
    pub in_var: Matrix,
    pub lin_mean: Matrix,
    pub lin_var: Matrix,
    pub nat_c: Matrix,
    pub nat_d: Matrix,
    pub act_mean: Matrix,
    pub act_var: Matrix,
    /// Inverted-dropout mask applied to this layer's outputs, if any.
    pub mask: Option<Matrix>,
    /// Poisson layers: which entries of the rate fit hit the positivity floor.
    pub fit_clamped: Option<Vec<bool>>,
}

/// A full forward evaluation over a batch.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub caches: Vec<LayerCache>,
}

impl ForwardPass {
    pub fn last(&self) -> &LayerCache {
        self.caches.last().expect("forward pass over empty network")
    }
}

/// Inverted-dropout mask: each entry is 1/(1-rate) with probability 1-rate
/// and 0 otherwise. Dropping a unit zeroes its mean and, via the squared
/// mask, its variance, keeping the dropped distribution degenerate at 0.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Matrix {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0,1)");
    let keep = 1.0 - rate;
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

/// Dropout request for a training-mode forward pass.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Propagate input moments through the network. `x.s` may be all zeros for
/// deterministic inputs. With `dropout`, hidden-layer outputs are masked by
/// inverted-dropout draws (mask on means, squared mask on variances); the
/// last layer is never masked.
pub fn forward(
    spec: &NetworkSpec,
    params: &[LayerParams],
    x: &MomentPair,
    mut dropout: Option<Dropout>,
) -> Result<ForwardPass> {
    if params.len() != spec.layers.len() {
        return Err(NpnError::shape(
            "forward",
            format!("{} layers vs {} param sets", spec.layers.len(), params.len()),
        ));
    }
    if x.m.cols() != spec.in_dim() {
        return Err(NpnError::shape(
            "forward",
            format!("input dim {} != spec fan_in {}", x.m.cols(), spec.in_dim()),
        ));
    }
    let mut a_m = x.m.clone();
    let mut a_s = x.s.clone();
    let mut caches = Vec::with_capacity(spec.layers.len());
    for (li, (l, p)) in spec.layers.iter().zip(params).enumerate() {
        let last = li + 1 == spec.layers.len();
        let (w_m, w_s) = weight_moments(l.weight_family(), &p.w_c.value, &p.w_d.value);
        let (b_m, b_s) = weight_moments(l.weight_family(), &p.b_c.value, &p.b_d.value);
        let (o_m, o_s) = linear_forward(&a_m, &a_s, &w_m, &w_s, &b_m, &b_s);
        if !o_m.all_finite() || !o_s.all_finite() {
            return Err(NpnError::NonFinite {
                what: "forward",
                detail: format!("non-finite linear output at layer {li}"),
            });
        }

        // Family mapping from output moments to proxy parameters.
        let mut fit_clamped = None;
        let (nat_c, nat_d) = match l.family {
            FamilyTag::Gaussian => (o_m.clone(), o_s.clone()),
            FamilyTag::Gamma => {
                if o_m.data().iter().any(|&v| !(v > 0.0)) {
                    return Err(NpnError::domain(
                        "forward",
                        format!("gamma layer {li} produced a nonpositive output mean"),
                    ));
                }
                let s_f = o_s.map(|v| v.max(VAR_FLOOR));
                let p = expfam::from_moments(
                    FamilyTag::Gamma,
                    &MomentPair::new(o_m.clone(), s_f),
                )?;
                (p.c, p.d)
            }
            FamilyTag::Poisson => {
                let s_f = o_s.map(|v| v.max(VAR_FLOOR));
                let PoissonFitResult { c, clamped } =
                    expfam::poisson_fit(&MomentPair::new(o_m.clone(), s_f))?;
                fit_clamped = Some(clamped);
                (c, Matrix::zeros(0, 0))
            }
            other => unreachable!("layer family {other} cannot arise"),
        };

        // Activation moments (the loss consumes the proxy side at the last
        // layer; its activation is still evaluated for prediction).
        let act = match l.activation {
            ActivationKind::Identity => MomentPair::new(o_m.clone(), o_s.clone()),
            ActivationKind::Sigmoid => {
                moments::gauss_sigmoid_moments(&MomentPair::new(nat_c.clone(), nat_d.clone()))
            }
            ActivationKind::Tanh => {
                moments::gauss_tanh_moments(&MomentPair::new(nat_c.clone(), nat_d.clone()))
            }
            ActivationKind::Relu => {
                moments::gauss_relu_moments(&MomentPair::new(nat_c.clone(), nat_d.clone()))
            }
            ActivationKind::ExpSaturating => match l.family {
                FamilyTag::Gamma => moments::gamma_act_moments(
                    &expfam::ProxyParams::pair(nat_c.clone(), nat_d.clone()),
                    l.r,
                    l.tau,
                )?,
                FamilyTag::Poisson => moments::poisson_act_moments(&nat_c, l.r, l.tau)?,
                other => unreachable!("exp_saturating on {other}"),
            },
            other => unreachable!("layer activation {other:?} cannot arise"),
        };

        let mut next_m = act.m.clone();
        let mut next_s = act.s.clone();
        let mut mask = None;
        if !last {
            if let Some(dr) = dropout.as_mut() {
                if dr.rate > 0.0 {
                    let m = dropout_mask(next_m.rows(), next_m.cols(), dr.rate, dr.rng);
                    next_m = next_m.hadamard(&m);
                    next_s = next_s.zip_map(&m, |s, k| s * k * k);
                    mask = Some(m);
                }
            }
        }

        caches.push(LayerCache {
            in_mean: a_m,
            in_var: a_s,
            lin_mean: o_m,
            lin_var: o_s,
            nat_c,
            nat_d,
            act_mean: act.m,
            act_var: act.s,
            mask,
            fit_clamped,
        });
        a_m = next_m;
        a_s = next_s;
    }
    Ok(ForwardPass { caches })
}

/// Per-example losses (summed over output dimensions) for a completed
/// forward pass against targets `y`.
pub fn loss_rows(spec: &NetworkSpec, fp: &ForwardPass, y: &Matrix) -> Result<Vec<f64>> {
    let last = fp.last();
    let rows = last.lin_mean.rows();
    let cols = last.lin_mean.cols();
    if y.shape() != (rows, cols) {
        return Err(NpnError::shape(
            "loss",
            format!("targets {:?} vs outputs {:?}", y.shape(), (rows, cols)),
        ));
    }
    let mut out = vec![0.0; rows];
    match spec.loss {
        LossKind::GaussKl => {
            let eps = spec.epsilon;
            for i in 0..rows {
                for j in 0..cols {
                    let oc = last.nat_c.at(i, j);
                    let od = last.nat_d.at(i, j).max(VAR_FLOOR);
                    let diff = oc - y.at(i, j);
                    out[i] += 0.5
                        * (diff * diff / od + eps / od - 1.0 + od.ln() - eps.ln());
                }
            }
        }
        LossKind::GammaNll => {
            if y.data().iter().any(|&v| !(v > 0.0)) {
                return Err(NpnError::domain("gamma_nll", "targets must be > 0"));
            }
            for i in 0..rows {
                for j in 0..cols {
                    let oc = last.nat_c.at(i, j);
                    let od = last.nat_d.at(i, j);
                    let yv = y.at(i, j);
                    out[i] += log_gamma(oc) - oc * od.ln() - (oc - 1.0) * yv.ln() + od * yv;
                }
            }
        }
        LossKind::PoissonNll => {
            if y.data().iter().any(|&v| !(v >= 0.0)) {
                return Err(NpnError::domain("poisson_nll", "targets must be >= 0"));
            }
            for i in 0..rows {
                for j in 0..cols {
                    let oc = last.nat_c.at(i, j);
                    let yv = y.at(i, j);
                    out[i] += oc - yv * oc.ln() + log_gamma(yv + 1.0);
                }
            }
        }
        LossKind::CrossEntropy => {
            for i in 0..rows {
                for j in 0..cols {
                    let om = last.lin_mean.at(i, j);
                    let os = last.lin_var.at(i, j);
                    let kappa = 1.0 / (1.0 + moments::ZETA_SQ * os).sqrt();
                    let z = om * kappa;
                    let yv = y.at(i, j);
                    // -y ln sigma(z) - (1-y) ln sigma(-z), in softplus form.
                    out[i] += yv * softplus(-z) + (1.0 - yv) * softplus(z);
                }
            }
        }
    }
    Ok(out)
}

/// Mean per-example loss over the batch.
pub fn batch_loss(spec: &NetworkSpec, fp: &ForwardPass, y: &Matrix) -> Result<f64> {
    let rows = loss_rows(spec, fp, y)?;
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// KL(N(c, d) || N(0, 1/lambda_s)) summed over entries, plus its gradients
/// w.r.t. (c, d): value per entry 0.5 (lambda_s d + lambda_s c^2 - 1
/// - ln lambda_s - ln d).
pub fn reg_kl_gauss(c: &Matrix, d: &Matrix, lambda_s: f64) -> (f64, Matrix, Matrix) {
    let mut v = 0.0;
    let mut dc = Matrix::zeros(c.rows(), c.cols());
    let mut dd = Matrix::zeros(c.rows(), c.cols());
    for i in 0..c.len() {
        let cv = c.data()[i];
        let dv = d.data()[i];
        v += 0.5 * (lambda_s * dv + lambda_s * cv * cv - 1.0 - lambda_s.ln() - dv.ln());
        dc.data_mut()[i] = lambda_s * cv;
        dd.data_mut()[i] = 0.5 * (lambda_s - 1.0 / dv);
    }
    (v, dc, dd)
}

/// Gamma-to-Gaussian-prior KL with the entropy in closed form and the
/// Gaussian cross term taken at the gamma's own mean scale: per entry
/// -ln Gamma(c) + (c-1) psi(c) + ln d - c + 0.5 ln(2 pi) - 0.5 ln lambda_s
/// + 0.5 lambda_s c (c + 1), with gradients
/// d/dc = (c-1) psi1(c) - 1 + lambda_s c + lambda_s/2, d/dd = 1/d.
pub fn reg_kl_gamma(c: &Matrix, d: &Matrix, lambda_s: f64) -> (f64, Matrix, Matrix) {
    use crate::special::trigamma;
    let mut v = 0.0;
    let mut dc = Matrix::zeros(c.rows(), c.cols());
    let mut dd = Matrix::zeros(c.rows(), c.cols());
    for i in 0..c.len() {
        let cv = c.data()[i];
        let dv = d.data()[i];
        v += -log_gamma(cv) + (cv - 1.0) * digamma(cv) + dv.ln() - cv + 0.5 * LN_2PI
            - 0.5 * lambda_s.ln()
            + 0.5 * lambda_s * cv * (cv + 1.0);
        dc.data_mut()[i] = (cv - 1.0) * trigamma(cv) - 1.0 + lambda_s * cv + lambda_s / 2.0;
        dd.data_mut()[i] = 1.0 / dv;
    }
    (v, dc, dd)
}

/// Per-layer value-space regularizer gradients, same shapes as the params.
pub struct RegGrads {
    pub w_c: Matrix,
    pub w_d: Matrix,
    pub b_c: Matrix,
    pub b_d: Matrix,
}

/// Total KL regularizer over all layers (weights and biases) and its
/// value-space gradients. Gaussian-weight layers use the Gaussian prior KL;
/// gamma-weight layers use the gamma form.
pub fn regularizer(spec: &NetworkSpec, params: &[LayerParams]) -> (f64, Vec<RegGrads>) {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(params.len());
    for (l, p) in spec.layers.iter().zip(params) {
        let f = match l.weight_family() {
            FamilyTag::Gaussian => reg_kl_gauss,
            _ => reg_kl_gamma,
        };
        let (vw, dwc, dwd) = f(&p.w_c.value, &p.w_d.value, spec.lambda_s);
        let (vb, dbc, dbd) = f(&p.b_c.value, &p.b_d.value, spec.lambda_s);
        total += vw + vb;
        grads.push(RegGrads {
            w_c: dwc,
            w_d: dwd,
            b_c: dbc,
            b_d: dbd,
        });
    }
    (total, grads)
}

/// Prediction pair per loss head: gauss_kl and gamma_nll report the proxy
/// pair (o_c, o_d); poisson_nll reports (rate, rate); cross-entropy reports
/// the sigmoid output moments.
pub fn predict(spec: &NetworkSpec, params: &[LayerParams], x: &MomentPair) -> Result<MomentPair> {
    let fp = forward(spec, params, x, None)?;
    let last = fp.last();
    Ok(match spec.loss {
        LossKind::GaussKl | LossKind::GammaNll => {
            MomentPair::new(last.nat_c.clone(), last.nat_d.clone())
        }
        LossKind::PoissonNll => MomentPair::new(last.nat_c.clone(), last.nat_c.clone()),
        LossKind::CrossEntropy => MomentPair::new(last.act_mean.clone(), last.act_var.clone()),
    })
}
