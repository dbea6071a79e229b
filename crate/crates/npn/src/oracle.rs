//! Independent verification oracles.
//!
//! Everything the closed forms in `moments` claim is re-derivable by brute
//! force: adaptive quadrature for continuous families, exact series
//! summation for the Poisson, seeded Monte Carlo as a third route, plus a
//! grid scanner and rank statistics for the acceptance checks. Nothing in
//! this module calls into `moments`, so agreement between the two is
//! evidence, not circularity.

use crate::error::{NpnError, Result};
use crate::expfam::FamilyTag;
use crate::special;

use rand::prelude::*;
use rand_distr::Distribution;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

// Gauss-Legendre nodes/weights on [-1, 1], 7 and 15 points, frozen from a
// 40-digit computation. A segment's value is the 15-point rule; its error
// estimate is |G15 - G7|.
const GL7: [(f64, f64); 7] = [
    (-0.9491079123427585, 0.1294849661688697),
    (-0.7415311855993945, 0.27970539148927664),
    (-0.4058451513773972, 0.3818300505051189),
    (0.0, 0.4179591836734694),
    (0.4058451513773972, 0.3818300505051189),
    (0.7415311855993945, 0.27970539148927664),
    (0.9491079123427585, 0.1294849661688697),
];
const GL15: [(f64, f64); 15] = [
    (-0.9879925180204854, 0.03075324199611727),
    (-0.937273392400706, 0.07036604748810812),
    (-0.8482065834104272, 0.10715922046717194),
    (-0.7244177313601701, 0.13957067792615432),
    (-0.5709721726085388, 0.16626920581699392),
    (-0.3941513470775634, 0.1861610000155622),
    (-0.20119409399743451, 0.19843148532711158),
    (0.0, 0.2025782419255613),
    (0.20119409399743451, 0.19843148532711158),
    (0.3941513470775634, 0.1861610000155622),
    (0.5709721726085388, 0.16626920581699392),
    (0.7244177313601701, 0.13957067792615432),
    (0.8482065834104272, 0.10715922046717194),
    (0.937273392400706, 0.07036604748810812),
    (0.9879925180204854, 0.03075324199611727),
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on error estimate; ties broken by interval start so heap
        // behavior is deterministic.
        self.err
            .total_cmp(&other.err)
            .then(self.a.total_cmp(&other.a))
    }
}

fn eval_segment(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> Segment {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut g7 = 0.0;
    for &(x, w) in &GL7 {
        g7 += w * f(mid + half * x);
    }
    let mut g15 = 0.0;
    for &(x, w) in &GL15 {
        g15 += w * f(mid + half * x);
    }
    Segment {
        a,
        b,
        value: g15 * half,
        err: (g15 - g7).abs() * half,
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub err_est: f64,
    pub segments: usize,
}

/// Integrates `f` over `[a, b]` to absolute tolerance `abs_tol` by global
/// worst-segment bisection, up to `max_segments` segments. Interior-node
/// rules tolerate integrable endpoint singularities.
pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_segments: usize,
) -> Result<Quadrature> {
    assert!(b > a, "integrate: empty interval [{a}, {b}]");
    assert!(abs_tol > 0.0, "integrate: tolerance must be positive");
    let init = 8.min(max_segments.max(1));
    let mut heap = BinaryHeap::new();
    let mut total_err = 0.0;
    let width = (b - a) / init as f64;
    for i in 0..init {
        let lo = a + width * i as f64;
        let hi = if i + 1 == init { b } else { a + width * (i + 1) as f64 };
        let seg = eval_segment(&mut f, lo, hi);
        total_err += seg.err;
        heap.push(seg);
    }
    while total_err > abs_tol && heap.len() < max_segments {
        let worst = heap.pop().expect("heap nonempty");
        total_err -= worst.err;
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval at floating-point resolution; keep its estimate.
            heap.push(worst);
            break;
        }
        let left = eval_segment(&mut f, worst.a, mid);
        let right = eval_segment(&mut f, mid, worst.b);
        total_err += left.err + right.err;
        heap.push(left);
        heap.push(right);
    }
    let segments = heap.len();
    // Deterministic final sums in interval order.
    let mut segs = heap.into_vec();
    segs.sort_by(|p, q| p.a.total_cmp(&q.a));
    let value: f64 = segs.iter().map(|s| s.value).sum();
    let err_est: f64 = segs.iter().map(|s| s.err).sum();
    if err_est > abs_tol {
        return Err(NpnError::NoConverge {
            what: "quadrature",
            requested: abs_tol,
            achieved: err_est,
        });
    }
    Ok(Quadrature {
        value,
        err_est,
        segments,
    })
}

/// Scalar density of a continuous family at `x`; `c`/`d` are the proxy
/// parameters (Rayleigh keeps sigma in `c`).
pub fn pdf(family: FamilyTag, c: f64, d: f64, x: f64) -> f64 {
    match family {
        FamilyTag::Gaussian => {
            let sigma = d.sqrt();
            special::std_normal_pdf((x - c) / sigma) / sigma
        }
        FamilyTag::Gamma => {
            if x <= 0.0 {
                0.0
            } else {
                (c * d.ln() - special::log_gamma(c) + (c - 1.0) * x.ln() - d * x).exp()
            }
        }
        FamilyTag::Beta => {
            if x <= 0.0 || x >= 1.0 {
                0.0
            } else {
                (special::log_gamma(c + d) - special::log_gamma(c) - special::log_gamma(d)
                    + (c - 1.0) * x.ln()
                    + (d - 1.0) * (1.0 - x).ln())
                .exp()
            }
        }
        FamilyTag::Rayleigh => {
            if x <= 0.0 {
                0.0
            } else {
                x / (c * c) * (-x * x / (2.0 * c * c)).exp()
            }
        }
        FamilyTag::Poisson => panic!("pdf: poisson is discrete, use the series oracle"),
    }
}

/// Integration range covering all but ~1e-14 of the family's mass.
pub fn support_range(family: FamilyTag, c: f64, d: f64) -> (f64, f64) {
    match family {
        FamilyTag::Gaussian => {
            let sigma = d.sqrt();
            (c - 12.0 * sigma, c + 12.0 * sigma)
        }
        // Upper bound sits far beyond the 1 - 1e-14 quantile for every
        // shape; the interior-node rule handles the x -> 0 behavior.
        FamilyTag::Gamma => (0.0, (c + 30.0 + 20.0 * (c + 1.0).sqrt()) / d),
        FamilyTag::Beta => (0.0, 1.0),
        FamilyTag::Rayleigh => (0.0, 13.0 * c),
        FamilyTag::Poisson => panic!("support_range: poisson is discrete"),
    }
}

/// First two central moments of `v(x)` under a continuous family, by
/// adaptive quadrature; also validates the density normalizes to 1.
pub fn quad_moments(
    family: FamilyTag,
    c: f64,
    d: f64,
    v: impl Fn(f64) -> f64,
    abs_tol: f64,
    max_segments: usize,
) -> Result<(f64, f64)> {
    let (lo, hi) = support_range(family, c, d);
    let mass = integrate(|x| pdf(family, c, d, x), lo, hi, abs_tol, max_segments)?;
    if (mass.value - 1.0).abs() > 1e-8 {
        return Err(NpnError::NonFinite {
            what: "quad_moments",
            detail: format!("{family} density mass {} != 1", mass.value),
        });
    }
    let m = integrate(|x| v(x) * pdf(family, c, d, x), lo, hi, abs_tol, max_segments)?.value;
    let m2 = integrate(
        |x| {
            let vx = v(x);
            vx * vx * pdf(family, c, d, x)
        },
        lo,
        hi,
        abs_tol,
        max_segments,
    )?
    .value;
    Ok((m, m2 - m * m))
}

/// First two central moments of `v(k)` under Poisson(c) by exact summation,
/// truncated once cumulative mass reaches `1 - tail` past the mode.
pub fn poisson_series_moments(c: f64, v: impl Fn(f64) -> f64, tail: f64) -> (f64, f64) {
    assert!(c > 0.0 && c < 500.0, "poisson series: rate {c} out of oracle range");
    let mut p = (-c).exp();
    let mut mass = p;
    let mut m = p * v(0.0);
    let mut m2 = p * v(0.0) * v(0.0);
    let mut k = 0.0;
    while mass < 1.0 - tail || k < c {
        k += 1.0;
        p *= c / k;
        let vk = v(k);
        mass += p;
        m += p * vk;
        m2 += p * vk * vk;
        if k > c + 200.0 + 50.0 * c.sqrt() {
            break;
        }
    }
    (m, m2 - m * m)
}

/// Monte Carlo moment estimate with standard errors.
#[derive(Debug, Clone, Copy)]
pub struct McMoments {
    pub m: f64,
    pub s: f64,
    pub se_m: f64,
    pub se_s: f64,
}

/// Seeded Monte Carlo moments of `v(x)` under the family.
pub fn mc_moments(
    family: FamilyTag,
    c: f64,
    d: f64,
    v: impl Fn(f64) -> f64,
    n: usize,
    rng: &mut impl Rng,
) -> McMoments {
    assert!(n >= 1000, "mc_moments: need at least 1e3 draws");
    let mut draw: Box<dyn FnMut(&mut dyn RngCore) -> f64> = match family {
        FamilyTag::Gaussian => {
            let dist = rand_distr::Normal::new(c, d.sqrt()).expect("normal params");
            Box::new(move |r| dist.sample(r))
        }
        FamilyTag::Gamma => {
            let dist = rand_distr::Gamma::new(c, 1.0 / d).expect("gamma params");
            Box::new(move |r| dist.sample(r))
        }
        FamilyTag::Beta => {
            let dist = rand_distr::Beta::new(c, d).expect("beta params");
            Box::new(move |r| dist.sample(r))
        }
        FamilyTag::Poisson => {
            let dist = rand_distr::Poisson::new(c).expect("poisson params");
            Box::new(move |r| dist.sample(r))
        }
        // Inverse transform: sigma * sqrt(-2 ln U).
        FamilyTag::Rayleigh => Box::new(move |r| {
            let u: f64 = r.gen_range(1e-300..1.0);
            c * (-2.0 * u.ln()).sqrt()
        }),
    };
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let x = v(draw(rng));
        s1 += x;
        s2 += x * x;
        s3 += x * x * x;
        s4 += x * x * x * x;
    }
    let nf = n as f64;
    let mean = s1 / nf;
    let var = (s2 / nf - mean * mean).max(0.0);
    // Central fourth moment from raw sums.
    let m4 = (s4 - 4.0 * mean * s3 + 6.0 * mean * mean * s2) / nf - 3.0 * mean.powi(4);
    McMoments {
        m: mean,
        s: var,
        se_m: (var / nf).sqrt(),
        se_s: ((m4 - var * var).max(0.0) / nf).sqrt(),
    }
}

/// Brute-force minimizer of `f` over the grid lo, lo+step, ..., hi.
pub fn grid_scan_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    assert!(step > 0.0 && hi > lo);
    let n = ((hi - lo) / step).round() as usize;
    let mut best_x = lo;
    let mut best = f(lo);
    for k in 1..=n {
        let x = lo + step * k as f64;
        let y = f(x);
        if y < best {
            best = y;
            best_x = x;
        }
    }
    (best_x, best)
}

/// Ranks with ties averaged, 1-based.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (ties averaged).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "spearman: length mismatch");
    assert!(xs.len() >= 2, "spearman: need at least 2 points");
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
