//! Exponential-family plumbing: family tags, proxy parameter pairs, the
//! mappings between proxy parameters and mean/variance pairs, the Poisson
//! rate fit, and per-family log-normalizers.
//!
//! Every distribution here is parameterized by a proxy pair `(c, d)` chosen
//! so that computation stays in an unconstrained-friendly space: Gaussian
//! `(mean, variance)`, gamma `(shape, rate)`, Poisson `(rate, unused)`, beta
//! `(alpha, beta)`, Rayleigh `(sigma, unused)`. The `f` map and its inverse
//! translate between proxy parameters and the `(m, s)` moment pairs that
//! linear layers propagate.

use crate::error::{NpnError, Result};
use crate::matrix::Matrix;
use crate::special;

use serde::{Deserialize, Serialize};

/// Floor applied when the Poisson rate fit lands nonpositive (possible only
/// on degenerate inputs with m <= 0, s = 0); keeps downstream logs finite.
pub const POISSON_C_MIN: f64 = 1e-6;

/// The supported exponential families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    Gaussian,
    Gamma,
    Poisson,
    Beta,
    Rayleigh,
}

impl FamilyTag {
    /// Whether the family's proxy pair has a second component.
    pub fn has_d(self) -> bool {
        matches!(self, FamilyTag::Gaussian | FamilyTag::Gamma | FamilyTag::Beta)
    }
}

impl std::fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FamilyTag::Gaussian => "gaussian",
            FamilyTag::Gamma => "gamma",
            FamilyTag::Poisson => "poisson",
            FamilyTag::Beta => "beta",
            FamilyTag::Rayleigh => "rayleigh",
        };
        f.write_str(s)
    }
}

/// Proxy parameter pair. For single-parameter families (Poisson, Rayleigh)
/// `d` is an empty matrix and `c` carries the rate / scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyParams {
    pub c: Matrix,
    pub d: Matrix,
}

impl ProxyParams {
    pub fn pair(c: Matrix, d: Matrix) -> Self {
        assert_eq!(c.shape(), d.shape(), "ProxyParams: c/d shape mismatch");
        ProxyParams { c, d }
    }

    pub fn single(c: Matrix) -> Self {
        ProxyParams {
            c,
            d: Matrix::zeros(0, 0),
        }
    }

    pub fn scalar_pair(c: f64, d: f64) -> Self {
        ProxyParams::pair(Matrix::row_vec(vec![c]), Matrix::row_vec(vec![d]))
    }

    pub fn scalar_single(c: f64) -> Self {
        ProxyParams::single(Matrix::row_vec(vec![c]))
    }

    /// Family-specific domain check.
    pub fn validate(&self, family: FamilyTag) -> Result<()> {
        let need_d = family.has_d();
        if need_d && self.d.shape() != self.c.shape() {
            return Err(NpnError::shape(
                "ProxyParams",
                format!("{family}: c {:?} vs d {:?}", self.c.shape(), self.d.shape()),
            ));
        }
        let bad = |what: &'static str, detail: String| Err(NpnError::domain(what, detail));
        match family {
            FamilyTag::Gaussian => {
                if self.d.data().iter().any(|&v| !(v >= 0.0)) {
                    return bad("gaussian params", "variance must be >= 0".to_string());
                }
            }
            FamilyTag::Gamma | FamilyTag::Beta => {
                if self.c.data().iter().any(|&v| !(v > 0.0))
                    || self.d.data().iter().any(|&v| !(v > 0.0))
                {
                    return bad("gamma/beta params", format!("{family}: c, d must be > 0"));
                }
            }
            FamilyTag::Poisson | FamilyTag::Rayleigh => {
                if self.c.data().iter().any(|&v| !(v > 0.0)) {
                    return bad("rate/scale param", format!("{family}: c must be > 0"));
                }
            }
        }
        Ok(())
    }
}

/// Mean/variance pair propagated between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair {
    pub m: Matrix,
    pub s: Matrix,
}

impl MomentPair {
    pub fn new(m: Matrix, s: Matrix) -> Self {
        assert_eq!(m.shape(), s.shape(), "MomentPair: m/s shape mismatch");
        MomentPair { m, s }
    }

    pub fn scalar(m: f64, s: f64) -> Self {
        MomentPair::new(Matrix::row_vec(vec![m]), Matrix::row_vec(vec![s]))
    }
}

/// The `f` map from proxy parameters to moments.
pub fn map_f(family: FamilyTag, p: &ProxyParams) -> Result<MomentPair> {
    p.validate(family)?;
    let mp = match family {
        FamilyTag::Gaussian => MomentPair::new(p.c.clone(), p.d.clone()),
        FamilyTag::Gamma => MomentPair::new(
            p.c.zip_map(&p.d, |c, d| c / d),
            p.c.zip_map(&p.d, |c, d| c / (d * d)),
        ),
        FamilyTag::Poisson => MomentPair::new(p.c.clone(), p.c.clone()),
        FamilyTag::Beta => MomentPair::new(
            p.c.zip_map(&p.d, |c, d| c / (c + d)),
            p.c.zip_map(&p.d, |c, d| {
                let n = c + d;
                c * d / (n * n * (n + 1.0))
            }),
        ),
        FamilyTag::Rayleigh => MomentPair::new(
            p.c.map(|sg| sg * (std::f64::consts::PI / 2.0).sqrt()),
            p.c.map(|sg| (2.0 - std::f64::consts::PI / 2.0) * sg * sg),
        ),
    };
    Ok(mp)
}

/// Inverse of `f` where it exists: Gaussian is the identity, gamma maps
/// `(m, s)` to `(m^2/s, m/s)`. Other families have no two-moment inverse
/// here (Poisson uses `poisson_fit`).
pub fn from_moments(family: FamilyTag, mp: &MomentPair) -> Result<ProxyParams> {
    match family {
        FamilyTag::Gaussian => {
            if mp.s.data().iter().any(|&v| !(v >= 0.0)) {
                return Err(NpnError::domain("from_moments", "gaussian: s must be >= 0"));
            }
            Ok(ProxyParams::pair(mp.m.clone(), mp.s.clone()))
        }
        FamilyTag::Gamma => {
            if mp.m.data().iter().any(|&v| !(v > 0.0)) || mp.s.data().iter().any(|&v| !(v > 0.0)) {
                return Err(NpnError::domain("from_moments", "gamma: m, s must be > 0"));
            }
            Ok(ProxyParams::pair(
                mp.m.zip_map(&mp.s, |m, s| m * m / s),
                mp.m.zip_map(&mp.s, |m, s| m / s),
            ))
        }
        other => Err(NpnError::domain(
            "from_moments",
            format!("{other} has no two-moment inverse"),
        )),
    }
}

/// Outcome of the Poisson rate fit: fitted rates and which entries hit the
/// positivity floor (their downstream gradients are zeroed).
#[derive(Debug, Clone)]
pub struct PoissonFitResult {
    pub c: Matrix,
    pub clamped: Vec<bool>,
}

impl PoissonFitResult {
    pub fn clamp_count(&self) -> usize {
        self.clamped.iter().filter(|&&b| b).count()
    }
}

/// KL-minimizing map from a moment pair to a single Poisson rate:
/// c = (2m - 1 + sqrt((2m - 1)^2 + 8s)) / 4.
pub fn poisson_fit(mp: &MomentPair) -> Result<PoissonFitResult> {
    if mp.s.data().iter().any(|&v| !(v >= 0.0)) {
        return Err(NpnError::domain("poisson_fit", "s must be >= 0"));
    }
    let mut clamped = vec![false; mp.m.len()];
    let mut c = Matrix::zeros(mp.m.rows(), mp.m.cols());
    for (i, (out, (&m, &s))) in c
        .data_mut()
        .iter_mut()
        .zip(mp.m.data().iter().zip(mp.s.data()))
        .enumerate()
    {
        let v = poisson_fit_scalar(m, s);
        if v <= 0.0 {
            *out = POISSON_C_MIN;
            clamped[i] = true;
        } else {
            *out = v;
        }
    }
    Ok(PoissonFitResult { c, clamped })
}

/// Scalar rate fit. A true Poisson input (s == m) is algebraically a fixed
/// point, and the branch returns m directly so exact Poissons propagate
/// without one-ulp drift through the square root.
#[inline]
pub fn poisson_fit_scalar(m: f64, s: f64) -> f64 {
    if s == m {
        return m;
    }
    let t = 2.0 * m - 1.0;
    0.25 * (t + (t * t + 8.0 * s).sqrt())
}

/// The rate-fit objective KL(N(c, c) || N(m, s)) whose minimizer the closed
/// form above is; exposed for the grid-scan oracle.
pub fn poisson_fit_kl(c: f64, m: f64, s: f64) -> f64 {
    0.5 * (c / s + (c - m) * (c - m) / s - 1.0 + s.ln() - c.ln())
}

/// Tags for the fallible special-function entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialKind {
    LogGamma,
    Digamma,
    Trigamma,
    StdNormalCdf,
}

/// Domain-checked special-function evaluation.
pub fn special_eval(kind: SpecialKind, x: f64) -> Result<f64> {
    let gamma_domain = |x: f64, what: &'static str| {
        if x > 0.0 {
            Ok(())
        } else {
            Err(NpnError::domain(what, format!("x = {x} (requires x > 0)")))
        }
    };
    match kind {
        SpecialKind::LogGamma => {
            gamma_domain(x, "log_gamma")?;
            Ok(special::log_gamma(x))
        }
        SpecialKind::Digamma => {
            gamma_domain(x, "digamma")?;
            Ok(special::digamma(x))
        }
        SpecialKind::Trigamma => {
            gamma_domain(x, "trigamma")?;
            Ok(special::trigamma(x))
        }
        SpecialKind::StdNormalCdf => Ok(special::std_normal_cdf(x)),
    }
}

/// Elementwise log of the normalizer g for the families on the saturating-
/// activation path. Constants are folded consistently, so normalizer ratios
/// between shifted parameters are exact expectations.
pub fn log_normalizer(family: FamilyTag, p: &ProxyParams) -> Result<Matrix> {
    p.validate(family)?;
    match family {
        FamilyTag::Gamma => Ok(p
            .c
            .zip_map(&p.d, |c, d| c * d.ln() - special::log_gamma(c))),
        FamilyTag::Poisson => Ok(p.c.map(|c| -c)),
        FamilyTag::Beta => Ok(p.c.zip_map(&p.d, |c, d| {
            special::log_gamma(c + d) - special::log_gamma(c) - special::log_gamma(d)
        })),
        FamilyTag::Rayleigh => Ok(p.c.map(|sg| -2.0 * sg.ln())),
        FamilyTag::Gaussian => Err(NpnError::domain(
            "log_normalizer",
            "gaussian is not on the saturating-activation path",
        )),
    }
}
