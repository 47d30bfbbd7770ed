//! Differentiable penalty evaluators: intermediate-variables regularization
//! (IVR) in its weighted (per-triplet) and full (whole-slice) forms, plus the
//! squared-Frobenius (F2) and cubed-absolute-value (N3) baselines.
//!
//! The weighted IVR penalty of a triplet `(i, j, k)` sums, over blocks `d`,
//! four groups of powered norms of the variables that appear while computing
//! the score in its different evaluation orders:
//!
//! 1. the embedding rows themselves,
//! 2. pairwise products of row norms (Kronecker-factor norms),
//! 3. the core contracted with one row,
//! 4. the core contracted with two rows.

use crate::model::{dot, TdbModel};
use crate::tensor::Mode;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    None,
    F2,
    N3,
    Ivr,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::F2 => "f2",
            RegKind::N3 => "n3",
            RegKind::Ivr => "ivr",
        }
    }
}

/// Regularizer selection plus coefficients. F2 and N3 read `l1` as their
/// single weight; IVR uses all four `l*` plus the norm power `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub kind: RegKind,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub alpha: f64,
}

impl RegConfig {
    pub fn none() -> Self {
        Self {
            kind: RegKind::None,
            l1: 0.0,
            l2: 0.0,
            l3: 0.0,
            l4: 0.0,
            alpha: 2.0,
        }
    }

    pub fn f2(lambda: f64) -> Self {
        Self {
            kind: RegKind::F2,
            l1: lambda,
            ..Self::none()
        }
    }

    pub fn n3(lambda: f64) -> Self {
        Self {
            kind: RegKind::N3,
            l1: lambda,
            ..Self::none()
        }
    }

    /// IVR with the default coefficient tying `l3 = l1`, `l4 = l2`.
    pub fn ivr(alpha: f64, l1: f64, l2: f64) -> Self {
        Self::ivr_all(alpha, l1, l2, l1, l2)
    }

    pub fn ivr_all(alpha: f64, l1: f64, l2: f64, l3: f64, l4: f64) -> Self {
        Self {
            kind: RegKind::Ivr,
            l1,
            l2,
            l3,
            l4,
            alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.l1),
            ("lambda2", self.l2),
            ("lambda3", self.l3),
            ("lambda4", self.l4),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.kind == RegKind::Ivr
            && self.l1 == 0.0
            && self.l2 == 0.0
            && self.l3 == 0.0
            && self.l4 == 0.0
        {
            return Err(Error::InvalidConfig(
                "ivr needs at least one positive lambda".into(),
            ));
        }
        Ok(())
    }
}

/// `||x||^alpha` from the squared norm.
#[inline]
pub(crate) fn pow_norm(sq: f64, alpha: f64) -> f64 {
    if sq == 0.0 {
        0.0
    } else {
        sq.powf(alpha / 2.0)
    }
}

#[inline]
fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Per-block intermediates of the weighted IVR penalty, shared between the
/// penalty, the score, and the trainer's backward pass.
pub(crate) struct IvrBlock {
    /// `y[m*P+n] = sum_l W[l,m,n] h[l]` (core x1 head row)
    pub y: Vec<f64>,
    /// `z[l*P+n] = sum_m W[l,m,n] r[m]` (core x2 relation row)
    pub z: Vec<f64>,
    /// `q[l*P+m] = sum_n W[l,m,n] t[n]` (core x3 tail row)
    pub q: Vec<f64>,
    /// `a[l] = sum_{m,n} W[l,m,n] r[m] t[n]`
    pub a: Vec<f64>,
    /// `b[m] = sum_{l,n} W[l,m,n] h[l] t[n]`
    pub b: Vec<f64>,
    /// `c[n] = sum_{l,m} W[l,m,n] h[l] r[m]`
    pub c: Vec<f64>,
}

impl IvrBlock {
    pub fn compute(w: &[f64], p: usize, h: &[f64], r: &[f64], t: &[f64]) -> Self {
        let mut y = vec![0.0; p * p];
        let mut z = vec![0.0; p * p];
        let mut q = vec![0.0; p * p];
        for l in 0..p {
            for m in 0..p {
                for n in 0..p {
                    let wv = w[(l * p + m) * p + n];
                    if wv == 0.0 {
                        continue;
                    }
                    y[m * p + n] += wv * h[l];
                    z[l * p + n] += wv * r[m];
                    q[l * p + m] += wv * t[n];
                }
            }
        }
        let mut a = vec![0.0; p];
        let mut b = vec![0.0; p];
        let mut c = vec![0.0; p];
        for l in 0..p {
            for n in 0..p {
                a[l] += z[l * p + n] * t[n];
            }
            for m in 0..p {
                b[m] += q[l * p + m] * h[l];
            }
        }
        for m in 0..p {
            for n in 0..p {
                c[n] += y[m * p + n] * r[m];
            }
        }
        Self { y, z, q, a, b, c }
    }
}

/// Weighted IVR penalty of a single triplet together with its score; both
/// are read off the same intermediate products.
pub fn ivr_triplet_with_score(
    model: &TdbModel,
    (i, j, k): (usize, usize, usize),
    cfg: &RegConfig,
) -> Result<(f64, f64)> {
    let p = model.parts();
    let w = model.core().values().values();
    let alpha = cfg.alpha;
    let mut reg = 0.0;
    let mut score = 0.0;
    for d in 0..model.blocks() {
        let h = model.head().row(i, d);
        let r = model.rel().row(j, d);
        let t = model.tail().row(k, d);
        let (ph, pr, pt) = (
            pow_norm(sq_norm(h), alpha),
            pow_norm(sq_norm(r), alpha),
            pow_norm(sq_norm(t), alpha),
        );
        reg += cfg.l1 * (ph + pr + pt);
        reg += cfg.l2 * (pt * pr + pt * ph + pr * ph);
        let blk = IvrBlock::compute(w, p, h, r, t);
        reg += cfg.l3
            * (pow_norm(sq_norm(&blk.y), alpha)
                + pow_norm(sq_norm(&blk.z), alpha)
                + pow_norm(sq_norm(&blk.q), alpha));
        reg += cfg.l4
            * (pow_norm(sq_norm(&blk.a), alpha)
                + pow_norm(sq_norm(&blk.b), alpha)
                + pow_norm(sq_norm(&blk.c), alpha));
        score += dot(&blk.c, t);
    }
    Ok((score, reg))
}

/// Weighted IVR penalty of a single triplet.
pub fn ivr_triplet(model: &TdbModel, triplet: (usize, usize, usize), cfg: &RegConfig) -> Result<f64> {
    ivr_triplet_with_score(model, triplet, cfg).map(|(_, reg)| reg)
}

/// F2 penalty: `lambda * (||H_i||^2 + ||R_j||^2 + ||T_k||^2)` over the full
/// sampled rows.
pub fn f2_triplet(model: &TdbModel, (i, j, k): (usize, usize, usize), lambda: f64) -> f64 {
    lambda
        * (sq_norm(model.head().full_row(i))
            + sq_norm(model.rel().full_row(j))
            + sq_norm(model.tail().full_row(k)))
}

/// N3 penalty: `lambda * sum(|h|^3 + |r|^3 + |t|^3)` over the full sampled
/// rows.
pub fn n3_triplet(model: &TdbModel, (i, j, k): (usize, usize, usize), lambda: f64) -> f64 {
    let cube = |xs: &[f64]| xs.iter().map(|v| v.abs().powi(3)).sum::<f64>();
    lambda
        * (cube(model.head().full_row(i))
            + cube(model.rel().full_row(j))
            + cube(model.tail().full_row(k)))
}

/// Penalty of a triplet under the configured regularizer.
pub fn penalty(model: &TdbModel, triplet: (usize, usize, usize), cfg: &RegConfig) -> Result<f64> {
    match cfg.kind {
        RegKind::None => Ok(0.0),
        RegKind::F2 => Ok(f2_triplet(model, triplet, cfg.l1)),
        RegKind::N3 => Ok(n3_triplet(model, triplet, cfg.l1)),
        RegKind::Ivr => ivr_triplet(model, triplet, cfg),
    }
}

/// Unweighted IVR over full entity/relation slices (the diagnostic quantity;
/// training uses the weighted per-triplet form).
pub fn ivr_full(model: &TdbModel, cfg: &RegConfig) -> Result<f64> {
    let alpha = cfg.alpha;
    let w = model.core().values();
    let mut reg = 0.0;
    for d in 0..model.blocks() {
        let hs = model.head().slice(d);
        let rs = model.rel().slice(d);
        let ts = model.tail().slice(d);
        let (ph, pr, pt) = (
            pow_norm(hs.frobenius_norm().powi(2), alpha),
            pow_norm(rs.frobenius_norm().powi(2), alpha),
            pow_norm(ts.frobenius_norm().powi(2), alpha),
        );
        reg += cfg.l1 * (ph + pr + pt);
        reg += cfg.l2 * (pt * pr + pt * ph + pr * ph);
        let wh = w.mode_product(&hs, Mode::One)?;
        let wr = w.mode_product(&rs, Mode::Two)?;
        let wt = w.mode_product(&ts, Mode::Three)?;
        reg += cfg.l3
            * (pow_norm(wh.frobenius_norm().powi(2), alpha)
                + pow_norm(wr.frobenius_norm().powi(2), alpha)
                + pow_norm(wt.frobenius_norm().powi(2), alpha));
        let wrt = wr.mode_product(&ts, Mode::Three)?;
        let wth = wt.mode_product(&hs, Mode::One)?;
        let whr = wh.mode_product(&rs, Mode::Two)?;
        reg += cfg.l4
            * (pow_norm(wrt.frobenius_norm().powi(2), alpha)
                + pow_norm(wth.frobenius_norm().powi(2), alpha)
                + pow_norm(whr.frobenius_norm().powi(2), alpha));
    }
    Ok(reg)
}
