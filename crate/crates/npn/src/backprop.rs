//! Reverse pass: analytic gradients of the batch objective through losses,
//! family mappings, activation moments, the probabilistic linear map, the
//! moment-to-proxy weight chain, and the softplus reparameterization, plus
//! a central-finite-difference verification harness.
//!
//! Gradients are w.r.t. the unconstrained (raw) parameter space the
//! optimizer steps in. Clamps (variance floors, rate-fit floor, activation
//! variance clamps) are treated as locally constant where active, so the
//! analytic gradients agree with finite differences on both sides of a
//! clamp as long as the evaluation point is not exactly on the boundary.

use crate::error::{NpnError, Result};
use crate::expfam::FamilyTag;
use crate::matrix::Matrix;
use crate::moments::{
    sigmoid_alpha, sigmoid_beta, tanh_alpha, tanh_beta, ActivationKind, ZETA_SQ,
};
use crate::network::{
    batch_loss, forward, regularizer, weight_moments, ForwardPass, LayerCache, LayerParams,
    LayerSpec, LossKind, NetworkSpec, VAR_FLOOR,
};
use crate::special::{digamma, sigmoid, std_normal_cdf, std_normal_pdf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// One layer's gradients in raw (optimizer) space, shapes mirroring
/// `LayerParams`.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub w_c: Matrix,
    pub w_d: Matrix,
    pub b_c: Matrix,
    pub b_d: Matrix,
}

impl LayerGrads {
    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        [&self.w_c, &self.w_d, &self.b_c, &self.b_d].into_iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        [&mut self.w_c, &mut self.w_d, &mut self.b_c, &mut self.b_d].into_iter()
    }
}

/// Full-network gradient set.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub layers: Vec<LayerGrads>,
}

impl GradientSet {
    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.iter())
            .map(|m| m.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_inplace(&mut self, f: f64) {
        for l in &mut self.layers {
            for m in l.iter_mut() {
                m.map_inplace(|v| v * f);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().flat_map(|l| l.iter()).all(|m| m.all_finite())
    }
}

/// Step of the ReLU mean at zero variance (subgradient 0 at the kink).
#[inline]
fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Jacobian [da_m/dm, da_m/ds, da_s/dm, da_s/ds] of the sigmoid moments.
#[inline]
pub fn sigmoid_act_grads_scalar(m: f64, s: f64) -> [f64; 4] {
    let zs = 1.0 + ZETA_SQ * s;
    let kap = 1.0 / zs.sqrt();
    let kapp = -0.5 * ZETA_SQ / (zs * zs.sqrt());
    let p = sigmoid(m * kap);
    let dp = p * (1.0 - p);
    let dam_dm = dp * kap;
    let dam_ds = dp * m * kapp;
    let al = sigmoid_alpha();
    let be = sigmoid_beta();
    let zs2 = 1.0 + ZETA_SQ * al * al * s;
    let kap2 = 1.0 / zs2.sqrt();
    let kap2p = -0.5 * ZETA_SQ * al * al / (zs2 * zs2.sqrt());
    let pu = sigmoid(al * (m + be) * kap2);
    let dpu = pu * (1.0 - pu);
    if pu - p * p < 0.0 {
        // Variance clamped at 0; locally constant.
        return [dam_dm, dam_ds, 0.0, 0.0];
    }
    [
        dam_dm,
        dam_ds,
        dpu * al * kap2 - 2.0 * p * dam_dm,
        dpu * al * (m + be) * kap2p - 2.0 * p * dam_ds,
    ]
}

/// Jacobian of the tanh moments, same layout as the sigmoid one.
#[inline]
pub fn tanh_act_grads_scalar(m: f64, s: f64) -> [f64; 4] {
    let zs = 0.25 + ZETA_SQ * s;
    let kap = 1.0 / zs.sqrt();
    let kapp = -0.5 * ZETA_SQ / (zs * zs.sqrt());
    let p = sigmoid(m * kap);
    let dp = p * (1.0 - p);
    let am = 2.0 * p - 1.0;
    let dam_dm = 2.0 * dp * kap;
    let dam_ds = 2.0 * dp * m * kapp;
    let al = tanh_alpha();
    let be = tanh_beta();
    let zs2 = 1.0 + ZETA_SQ * al * al * s;
    let kap2 = 1.0 / zs2.sqrt();
    let kap2p = -0.5 * ZETA_SQ * al * al / (zs2 * zs2.sqrt());
    let pu = sigmoid(al * (m + be) * kap2);
    let dpu = pu * (1.0 - pu);
    if 4.0 * pu - am * am - 2.0 * am - 1.0 < 0.0 {
        return [dam_dm, dam_ds, 0.0, 0.0];
    }
    [
        dam_dm,
        dam_ds,
        4.0 * dpu * al * kap2 - (2.0 * am + 2.0) * dam_dm,
        4.0 * dpu * al * (m + be) * kap2p - (2.0 * am + 2.0) * dam_ds,
    ]
}

/// Jacobian of the exact ReLU moments; the zero-variance branch is the
/// deterministic ReLU (step mean derivative, passthrough variance slope).
#[inline]
pub fn relu_act_grads_scalar(m: f64, s: f64) -> [f64; 4] {
    if s <= 0.0 {
        return [step(m), 0.0, 0.0, step(m)];
    }
    let sd = s.sqrt();
    let g = m / sd;
    let cdf = std_normal_cdf(g);
    let pdf = std_normal_pdf(g);
    let am = cdf * m + sd * pdf;
    let raw = cdf * (m * m + s) + m * sd * pdf - am * am;
    let dam_dm = cdf;
    let dam_ds = pdf / (2.0 * sd);
    if raw < 0.0 {
        return [dam_dm, dam_ds, 0.0, 0.0];
    }
    [
        dam_dm,
        dam_ds,
        // dE[v^2]/dm = 2 a_m and dE[v^2]/ds = Phi collapse the quotient
        // terms; only the -a_m^2 chain remains.
        2.0 * am * (1.0 - cdf),
        cdf - am * pdf / sd,
    ]
}

/// Jacobian [da_m/dc, da_m/dd, da_s/dc, da_s/dd] of the gamma-input
/// saturating-exponential moments w.r.t. the proxy parameters.
#[inline]
pub fn gamma_act_grads_scalar(c: f64, d: f64, r: f64, tau: f64) -> [f64; 4] {
    let l1 = d.ln() - (d + tau).ln();
    let l2 = d.ln() - (d + 2.0 * tau).ln();
    let p1 = (c * l1).exp();
    let p2 = (c * l2).exp();
    let dp1_dd = p1 * c * tau / (d * (d + tau));
    let dp2_dd = p2 * c * 2.0 * tau / (d * (d + 2.0 * tau));
    let dam_dc = -r * p1 * l1;
    let dam_dd = -r * dp1_dd;
    if p2 - p1 * p1 < 0.0 {
        return [dam_dc, dam_dd, 0.0, 0.0];
    }
    [
        dam_dc,
        dam_dd,
        r * r * (p2 * l2 - 2.0 * p1 * p1 * l1),
        r * r * (dp2_dd - 2.0 * p1 * dp1_dd),
    ]
}

/// Jacobian [da_m/dc, da_s/dc] of the Poisson-input saturating-exponential
/// moments w.r.t. the rate.
#[inline]
pub fn poisson_act_grads_scalar(c: f64, r: f64, tau: f64) -> [f64; 2] {
    let g1 = (-tau).exp() - 1.0;
    let g2 = (-2.0 * tau).exp() - 1.0;
    let e1 = (g1 * c).exp();
    let e2 = (g2 * c).exp();
    let dam_dc = -r * g1 * e1;
    if e2 - e1 * e1 < 0.0 {
        return [dam_dc, 0.0];
    }
    [dam_dc, r * r * (g2 * e2 - 2.0 * g1 * e1 * e1)]
}

/// Jacobian (dc/dm, dc/ds) of the Poisson rate fit
/// c = (2m - 1 + sqrt((2m-1)^2 + 8s))/4. Smooth through s = m, where it
/// evaluates to (2m/(2m+1), 1/(2m+1)).
#[inline]
pub fn poisson_fit_grads_scalar(m: f64, s: f64) -> (f64, f64) {
    let t = 2.0 * m - 1.0;
    let rt = (t * t + 8.0 * s).sqrt();
    (0.5 * (1.0 + t / rt), 1.0 / rt)
}

/// Inversion chain for gamma layers: gradients w.r.t. proxy (c, d) pulled
/// back to output moments (m, s) through c = m^2/s, d = m/s with the
/// variance floored at `VAR_FLOOR` (locally constant below it).
fn gamma_map_pullback(
    g_c: &Matrix,
    g_d: &Matrix,
    lin_mean: &Matrix,
    lin_var: &Matrix,
) -> (Matrix, Matrix) {
    let mut do_m = Matrix::zeros(lin_mean.rows(), lin_mean.cols());
    let mut do_s = Matrix::zeros(lin_mean.rows(), lin_mean.cols());
    for i in 0..lin_mean.len() {
        let m = lin_mean.data()[i];
        let s_raw = lin_var.data()[i];
        let s = s_raw.max(VAR_FLOOR);
        let gc = g_c.data()[i];
        let gd = g_d.data()[i];
        do_m.data_mut()[i] = gc * 2.0 * m / s + gd / s;
        do_s.data_mut()[i] = if s_raw > VAR_FLOOR {
            -gc * m * m / (s * s) - gd * m / (s * s)
        } else {
            0.0
        };
    }
    (do_m, do_s)
}

/// Rate-fit chain for Poisson layers: gradient w.r.t. the fitted rate pulled
/// back to output moments; floor-clamped entries are locally constant.
fn poisson_fit_pullback(
    g_c: &Matrix,
    lin_mean: &Matrix,
    lin_var: &Matrix,
    clamped: &[bool],
) -> (Matrix, Matrix) {
    let mut do_m = Matrix::zeros(lin_mean.rows(), lin_mean.cols());
    let mut do_s = Matrix::zeros(lin_mean.rows(), lin_mean.cols());
    for i in 0..lin_mean.len() {
        if clamped[i] {
            continue;
        }
        let m = lin_mean.data()[i];
        let s_raw = lin_var.data()[i];
        let (dm, ds) = poisson_fit_grads_scalar(m, s_raw.max(VAR_FLOOR));
        let gc = g_c.data()[i];
        do_m.data_mut()[i] = gc * dm;
        do_s.data_mut()[i] = if s_raw > VAR_FLOOR { gc * ds } else { 0.0 };
    }
    (do_m, do_s)
}

/// Gradients of the mean batch loss w.r.t. the last layer's linear output
/// moments (o_m, o_s), composing the loss's native gradients with the
/// family mapping where the layer is not Gaussian.
fn loss_output_grads(
    spec: &NetworkSpec,
    last: &LayerCache,
    y: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let rows = last.lin_mean.rows();
    let cols = last.lin_mean.cols();
    if y.shape() != (rows, cols) {
        return Err(NpnError::shape(
            "loss_grads",
            format!("targets {:?} vs outputs {:?}", y.shape(), (rows, cols)),
        ));
    }
    let inv_b = 1.0 / rows as f64;
    match spec.loss {
        LossKind::GaussKl => {
            let mut do_m = Matrix::zeros(rows, cols);
            let mut do_s = Matrix::zeros(rows, cols);
            let eps = spec.epsilon;
            for i in 0..do_m.len() {
                let oc = last.nat_c.data()[i];
                let od_raw = last.nat_d.data()[i];
                let od = od_raw.max(VAR_FLOOR);
                let diff = oc - y.data()[i];
                do_m.data_mut()[i] = diff / od * inv_b;
                do_s.data_mut()[i] = if od_raw > VAR_FLOOR {
                    0.5 * (1.0 / od - eps / (od * od) - diff * diff / (od * od)) * inv_b
                } else {
                    0.0
                };
            }
            Ok((do_m, do_s))
        }
        LossKind::CrossEntropy => {
            let mut do_m = Matrix::zeros(rows, cols);
            let mut do_s = Matrix::zeros(rows, cols);
            for i in 0..do_m.len() {
                let om = last.lin_mean.data()[i];
                let os = last.lin_var.data()[i];
                let zs = 1.0 + ZETA_SQ * os;
                let kap = 1.0 / zs.sqrt();
                let kapp = -0.5 * ZETA_SQ / (zs * zs.sqrt());
                let base = (sigmoid(om * kap) - y.data()[i]) * inv_b;
                do_m.data_mut()[i] = base * kap;
                do_s.data_mut()[i] = base * om * kapp;
            }
            Ok((do_m, do_s))
        }
        LossKind::GammaNll => {
            let mut g_c = Matrix::zeros(rows, cols);
            let mut g_d = Matrix::zeros(rows, cols);
            for i in 0..g_c.len() {
                let oc = last.nat_c.data()[i];
                let od = last.nat_d.data()[i];
                let yv = y.data()[i];
                g_c.data_mut()[i] = (digamma(oc) - od.ln() - yv.ln()) * inv_b;
                g_d.data_mut()[i] = (-oc / od + yv) * inv_b;
            }
            Ok(gamma_map_pullback(&g_c, &g_d, &last.lin_mean, &last.lin_var))
        }
        LossKind::PoissonNll => {
            let mut g_c = Matrix::zeros(rows, cols);
            for i in 0..g_c.len() {
                let oc = last.nat_c.data()[i];
                g_c.data_mut()[i] = (1.0 - y.data()[i] / oc) * inv_b;
            }
            let clamped = last
                .fit_clamped
                .as_ref()
                .expect("poisson cache missing fit mask");
            Ok(poisson_fit_pullback(&g_c, &last.lin_mean, &last.lin_var, clamped))
        }
    }
}

/// Gradients w.r.t. a hidden layer's linear output moments given upstream
/// gradients w.r.t. its (pre-dropout) activation moments.
fn activation_input_grads(
    l: &LayerSpec,
    cache: &LayerCache,
    da_m: &Matrix,
    da_s: &Matrix,
) -> (Matrix, Matrix) {
    match l.activation {
        ActivationKind::Identity => (da_m.clone(), da_s.clone()),
        ActivationKind::Sigmoid | ActivationKind::Tanh | ActivationKind::Relu => {
            let f = match l.activation {
                ActivationKind::Sigmoid => sigmoid_act_grads_scalar,
                ActivationKind::Tanh => tanh_act_grads_scalar,
                _ => relu_act_grads_scalar,
            };
            let mut do_m = Matrix::zeros(da_m.rows(), da_m.cols());
            let mut do_s = Matrix::zeros(da_m.rows(), da_m.cols());
            for i in 0..da_m.len() {
                let j = f(cache.nat_c.data()[i], cache.nat_d.data()[i]);
                let gm = da_m.data()[i];
                let gs = da_s.data()[i];
                do_m.data_mut()[i] = gm * j[0] + gs * j[2];
                do_s.data_mut()[i] = gm * j[1] + gs * j[3];
            }
            (do_m, do_s)
        }
        ActivationKind::ExpSaturating => match l.family {
            FamilyTag::Gamma => {
                let mut g_c = Matrix::zeros(da_m.rows(), da_m.cols());
                let mut g_d = Matrix::zeros(da_m.rows(), da_m.cols());
                for i in 0..da_m.len() {
                    let j = gamma_act_grads_scalar(
                        cache.nat_c.data()[i],
                        cache.nat_d.data()[i],
                        l.r,
                        l.tau,
                    );
                    let gm = da_m.data()[i];
                    let gs = da_s.data()[i];
                    g_c.data_mut()[i] = gm * j[0] + gs * j[2];
                    g_d.data_mut()[i] = gm * j[1] + gs * j[3];
                }
                gamma_map_pullback(&g_c, &g_d, &cache.lin_mean, &cache.lin_var)
            }
            FamilyTag::Poisson => {
                let mut g_c = Matrix::zeros(da_m.rows(), da_m.cols());
                for i in 0..da_m.len() {
                    let j = poisson_act_grads_scalar(cache.nat_c.data()[i], l.r, l.tau);
                    g_c.data_mut()[i] = da_m.data()[i] * j[0] + da_s.data()[i] * j[1];
                }
                let clamped = cache
                    .fit_clamped
                    .as_ref()
                    .expect("poisson cache missing fit mask");
                poisson_fit_pullback(&g_c, &cache.lin_mean, &cache.lin_var, clamped)
            }
            other => unreachable!("exp_saturating on {other}"),
        },
        other => unreachable!("layer activation {other:?} cannot arise"),
    }
}

/// Full reverse pass over a cached forward evaluation: data-loss gradients
/// plus `reg_scale` times the KL regularizer gradients, in raw space.
pub fn backward(
    spec: &NetworkSpec,
    params: &[LayerParams],
    fp: &ForwardPass,
    y: &Matrix,
    reg_scale: f64,
) -> Result<GradientSet> {
    if fp.caches.len() != spec.layers.len() || params.len() != spec.layers.len() {
        return Err(NpnError::shape(
            "backward",
            "cache/params/spec layer count mismatch".to_string(),
        ));
    }
    let (_, reg_grads) = regularizer(spec, params);
    let (mut do_m, mut do_s) = loss_output_grads(spec, fp.last(), y)?;
    let mut out: Vec<Option<LayerGrads>> = (0..spec.layers.len()).map(|_| None).collect();
    for li in (0..spec.layers.len()).rev() {
        let l = &spec.layers[li];
        let p = &params[li];
        let cache = &fp.caches[li];
        let (w_m, w_s) = weight_moments(l.weight_family(), &p.w_c.value, &p.w_d.value);

        // Moment-space parameter gradients.
        let mut dw_m = cache.in_mean.matmul_tn(&do_m);
        dw_m.add_assign(&w_m.scale(2.0).hadamard(&cache.in_var.matmul_tn(&do_s)));
        let dw_s = cache
            .in_var
            .add(&cache.in_mean.hadamard(&cache.in_mean))
            .matmul_tn(&do_s);
        let db_m = do_m.col_sums();
        let db_s = do_s.col_sums();

        // Moment space to proxy-value space.
        let (mut dwc, mut dwd, mut dbc, mut dbd) = match l.weight_family() {
            FamilyTag::Gaussian => (dw_m, dw_s, db_m, db_s),
            FamilyTag::Gamma => {
                let c = &p.w_c.value;
                let d = &p.w_d.value;
                let dwc = dw_m.zip_map(d, |g, dv| g / dv).add(&dw_s.zip_map(d, |g, dv| g / (dv * dv)));
                let mut dwd = Matrix::zeros(d.rows(), d.cols());
                for i in 0..d.len() {
                    let cv = c.data()[i];
                    let dv = d.data()[i];
                    dwd.data_mut()[i] = -dw_m.data()[i] * cv / (dv * dv)
                        - 2.0 * dw_s.data()[i] * cv / (dv * dv * dv);
                }
                let bc = &p.b_c.value;
                let bd = &p.b_d.value;
                let dbc = db_m.zip_map(bd, |g, dv| g / dv).add(&db_s.zip_map(bd, |g, dv| g / (dv * dv)));
                let mut dbd = Matrix::zeros(bd.rows(), bd.cols());
                for i in 0..bd.len() {
                    let cv = bc.data()[i];
                    let dv = bd.data()[i];
                    dbd.data_mut()[i] = -db_m.data()[i] * cv / (dv * dv)
                        - 2.0 * db_s.data()[i] * cv / (dv * dv * dv);
                }
                (dwc, dwd, dbc, dbd)
            }
            other => unreachable!("weight family {other} cannot arise"),
        };

        // Regularizer contribution, then the softplus chain to raw space.
        if reg_scale != 0.0 {
            let rg = &reg_grads[li];
            dwc.add_assign(&rg.w_c.scale(reg_scale));
            dwd.add_assign(&rg.w_d.scale(reg_scale));
            dbc.add_assign(&rg.b_c.scale(reg_scale));
            dbd.add_assign(&rg.b_d.scale(reg_scale));
        }
        out[li] = Some(LayerGrads {
            w_c: p.w_c.chain_grad(&dwc),
            w_d: p.w_d.chain_grad(&dwd),
            b_c: p.b_c.chain_grad(&dbc),
            b_d: p.b_d.chain_grad(&dbd),
        });

        // Input-side gradients, then the previous layer's dropout mask and
        // activation chain.
        if li > 0 {
            let mut da_m = do_m.matmul_nt(&w_m);
            da_m.add_assign(
                &do_s
                    .matmul_nt(&w_s)
                    .hadamard(&cache.in_mean.scale(2.0)),
            );
            let mut da_s = do_s.matmul_nt(&w_s.add(&w_m.hadamard(&w_m)));
            let prev = &fp.caches[li - 1];
            if let Some(mask) = &prev.mask {
                da_m = da_m.hadamard(mask);
                da_s = da_s.zip_map(mask, |g, k| g * k * k);
            }
            let (nm, ns) =
                activation_input_grads(&spec.layers[li - 1], prev, &da_m, &da_s);
            do_m = nm;
            do_s = ns;
        }
    }
    let grads = GradientSet {
        layers: out.into_iter().map(|g| g.unwrap()).collect(),
    };
    if !grads.all_finite() {
        return Err(NpnError::NonFinite {
            what: "backward",
            detail: "non-finite gradient".to_string(),
        });
    }
    Ok(grads)
}

/// The scalar objective finite differences probe: mean batch loss plus
/// `reg_scale` times the KL regularizer, evaluated without dropout.
pub fn objective(
    spec: &NetworkSpec,
    params: &[LayerParams],
    x: &crate::expfam::MomentPair,
    y: &Matrix,
    reg_scale: f64,
) -> Result<f64> {
    let fp = forward(spec, params, x, None)?;
    let loss = batch_loss(spec, &fp, y)?;
    if reg_scale == 0.0 {
        // Skip: the regularizer is infinite at zero variance proxies and
        // 0 * inf would poison an otherwise finite objective.
        return Ok(loss);
    }
    let (reg, _) = regularizer(spec, params);
    Ok(loss + reg_scale * reg)
}

/// Options for the finite-difference harness.
#[derive(Debug, Clone)]
pub struct FdOptions {
    /// Per-matrix cap on checked indices; larger matrices are subsampled.
    pub max_per_matrix: usize,
    /// Seed for the subsampling draws.
    pub seed: u64,
    /// Regularizer weight inside the probed objective.
    pub reg_scale: f64,
    /// Step is h_scale * max(1, |theta|).
    pub h_scale: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            max_per_matrix: 200,
            seed: 0,
            reg_scale: 1.0,
            h_scale: 1e-5,
        }
    }
}

/// Worst disagreement found by a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct FdFinding {
    pub layer: usize,
    pub param: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub fd: f64,
    pub h: f64,
    pub rel_err: f64,
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub worst: Option<FdFinding>,
    pub checked: usize,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.as_ref().map(|w| w.rel_err).unwrap_or(0.0)
    }
}

const PARAM_NAMES: [&str; 4] = ["w_c", "w_d", "b_c", "b_d"];

fn param_of<'a>(lp: &'a mut LayerParams, which: usize) -> &'a mut crate::network::ParamMatrix {
    match which {
        0 => &mut lp.w_c,
        1 => &mut lp.w_d,
        2 => &mut lp.b_c,
        _ => &mut lp.b_d,
    }
}

fn grad_of(lg: &LayerGrads, which: usize) -> &Matrix {
    match which {
        0 => &lg.w_c,
        1 => &lg.w_d,
        2 => &lg.b_c,
        _ => &lg.b_d,
    }
}

/// Compare a gradient set against central finite differences of the
/// objective in raw space. Relative error per entry is
/// |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8).
pub fn fd_compare(
    spec: &NetworkSpec,
    params: &[LayerParams],
    x: &crate::expfam::MomentPair,
    y: &Matrix,
    grads: &GradientSet,
    opts: &FdOptions,
) -> Result<FdReport> {
    let mut work: Vec<LayerParams> = params.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: Option<FdFinding> = None;
    let mut checked = 0usize;
    for li in 0..work.len() {
        for which in 0..4 {
            let len = param_of(&mut work[li], which).raw.len();
            let indices: Vec<usize> = if len <= opts.max_per_matrix {
                (0..len).collect()
            } else {
                rand::seq::index::sample(&mut rng, len, opts.max_per_matrix).into_vec()
            };
            for idx in indices {
                let theta = param_of(&mut work[li], which).raw.data()[idx];
                let h = opts.h_scale * theta.abs().max(1.0);
                let eval = |v: f64, work: &mut Vec<LayerParams>| -> Result<f64> {
                    let pm = param_of(&mut work[li], which);
                    pm.raw.data_mut()[idx] = v;
                    pm.refresh();
                    objective(spec, work, x, y, opts.reg_scale)
                };
                let jp = eval(theta + h, &mut work)?;
                let jm = eval(theta - h, &mut work)?;
                eval(theta, &mut work)?;
                let fd = (jp - jm) / (2.0 * h);
                let ga = grad_of(&grads.layers[li], which).data()[idx];
                let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-8);
                checked += 1;
                if worst.as_ref().map(|w| rel > w.rel_err).unwrap_or(true) {
                    worst = Some(FdFinding {
                        layer: li,
                        param: PARAM_NAMES[which],
                        index: idx,
                        analytic: ga,
                        fd,
                        h,
                        rel_err: rel,
                    });
                }
            }
        }
    }
    Ok(FdReport { worst, checked })
}

/// Run backward and verify it against finite differences.
pub fn fd_check(
    spec: &NetworkSpec,
    params: &[LayerParams],
    x: &crate::expfam::MomentPair,
    y: &Matrix,
    opts: &FdOptions,
) -> Result<FdReport> {
    let fp = forward(spec, params, x, None)?;
    let grads = backward(spec, params, &fp, y, opts.reg_scale)?;
    fd_compare(spec, params, x, y, &grads, opts)
}
