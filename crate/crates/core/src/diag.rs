//! Trace-norm diagnostics: the overlapped trace norm of a score tensor, the
//! two upper bounds the regularizer minimizes, an equality-achieving
//! decomposition for the first bound, and the matrix factorization split
//! behind both.
//!
//! For a tensor `X` with unfoldings `X_(1..3)`, the overlapped trace norm is
//! `L(X; alpha) = sum_n ||X_(n)||_*^(alpha/2)`. For any block-term
//! decomposition of `X`,
//!
//! - bound 1: `2 sqrt(l1 l4) L(X; alpha)` is at most the sum of the row-norm
//!   terms (weight `l1`) and double-contraction terms (weight `l4`), and the
//!   bound is tight;
//! - bound 2: `2 sqrt(l2 l3) L(X; alpha)` is at most the sum of the pairwise
//!   norm-product terms (weight `l2`) and single-contraction terms (weight
//!   `l3`); this one is not always attainable.

use crate::model::{CoreTensor, EmbeddingTable, PresetKind, TdbModel};
use crate::reg::{pow_norm, RegConfig};
use crate::tensor::{self, DenseMatrix, DenseTensor3, Mode, COMPACT_SVD_REL_TOL};
use crate::{Error, Result};
use serde::Serialize;

/// Default cell budget for materializing score tensors (1 GiB of f64).
pub const DEFAULT_TENSOR_BUDGET: usize = 1 << 27;

/// Relative tolerance for bound verification.
pub const BOUND_REL_TOL: f64 = 1e-8;

/// `L(X; alpha)`: sum over the three unfoldings of trace norm to the power
/// `alpha / 2`.
pub fn overlapped_trace_norm(x: &DenseTensor3, alpha: f64) -> Result<f64> {
    let mut total = 0.0;
    for mode in Mode::ALL {
        total += tensor::trace_norm(&x.unfold(mode))?.powf(alpha / 2.0);
    }
    Ok(total)
}

/// Per-mode trace norms of a tensor's unfoldings.
pub fn mode_trace_norms(x: &DenseTensor3) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (slot, mode) in Mode::ALL.into_iter().enumerate() {
        out[slot] = tensor::trace_norm(&x.unfold(mode))?;
    }
    Ok(out)
}

/// Right-hand side of the first bound: row-norm terms weighted by `l1` plus
/// double-contraction terms weighted by `l4`, summed over blocks.
pub fn bound1_rhs(model: &TdbModel, l1: f64, l4: f64, alpha: f64) -> Result<f64> {
    let w = model.core().values();
    let mut total = 0.0;
    for d in 0..model.blocks() {
        let hs = model.head().slice(d);
        let rs = model.rel().slice(d);
        let ts = model.tail().slice(d);
        total += l1
            * (pow_norm(hs.frobenius_norm().powi(2), alpha)
                + pow_norm(rs.frobenius_norm().powi(2), alpha)
                + pow_norm(ts.frobenius_norm().powi(2), alpha));
        let wrt = w
            .mode_product(&rs, Mode::Two)?
            .mode_product(&ts, Mode::Three)?;
        let wth = w
            .mode_product(&ts, Mode::Three)?
            .mode_product(&hs, Mode::One)?;
        let whr = w
            .mode_product(&hs, Mode::One)?
            .mode_product(&rs, Mode::Two)?;
        total += l4
            * (pow_norm(wrt.frobenius_norm().powi(2), alpha)
                + pow_norm(wth.frobenius_norm().powi(2), alpha)
                + pow_norm(whr.frobenius_norm().powi(2), alpha));
    }
    Ok(total)
}

/// Right-hand side of the second bound: pairwise norm products weighted by
/// `l2` plus single-contraction terms weighted by `l3`.
pub fn bound2_rhs(model: &TdbModel, l2: f64, l3: f64, alpha: f64) -> Result<f64> {
    let w = model.core().values();
    let mut total = 0.0;
    for d in 0..model.blocks() {
        let hs = model.head().slice(d);
        let rs = model.rel().slice(d);
        let ts = model.tail().slice(d);
        let (ph, pr, pt) = (
            pow_norm(hs.frobenius_norm().powi(2), alpha),
            pow_norm(rs.frobenius_norm().powi(2), alpha),
            pow_norm(ts.frobenius_norm().powi(2), alpha),
        );
        total += l2 * (pt * pr + pt * ph + pr * ph);
        let wh = w.mode_product(&hs, Mode::One)?;
        let wr = w.mode_product(&rs, Mode::Two)?;
        let wt = w.mode_product(&ts, Mode::Three)?;
        total += l3
            * (pow_norm(wh.frobenius_norm().powi(2), alpha)
                + pow_norm(wr.frobenius_norm().powi(2), alpha)
                + pow_norm(wt.frobenius_norm().powi(2), alpha));
    }
    Ok(total)
}

/// Both bounds evaluated against one model's materialized tensor.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    /// Trace norms of the three unfoldings.
    pub mode_norms: [f64; 3],
    /// Overlapped trace norm at the configured power.
    pub l_value: f64,
    /// `l_value` rounded to the nearest integer (reporting convention).
    pub l_rounded: i64,
    pub alpha: f64,
    pub lhs1: f64,
    pub rhs1: f64,
    pub gap1: f64,
    pub lhs2: f64,
    pub rhs2: f64,
    pub gap2: f64,
}

impl BoundReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Materializes the model's tensor, evaluates both bounds and fails hard on
/// a violation beyond `BOUND_REL_TOL * max(1, rhs)`.
pub fn check_bounds(model: &TdbModel, cfg: &RegConfig, max_cells: usize) -> Result<BoundReport> {
    let x = model.materialize(max_cells)?;
    let mode_norms = mode_trace_norms(&x)?;
    let alpha = cfg.alpha;
    let l_value: f64 = mode_norms.iter().map(|tn| tn.powf(alpha / 2.0)).sum();

    let lhs1 = 2.0 * (cfg.l1 * cfg.l4).sqrt() * l_value;
    let rhs1 = bound1_rhs(model, cfg.l1, cfg.l4, alpha)?;
    let lhs2 = 2.0 * (cfg.l2 * cfg.l3).sqrt() * l_value;
    let rhs2 = bound2_rhs(model, cfg.l2, cfg.l3, alpha)?;
    let report = BoundReport {
        mode_norms,
        l_value,
        l_rounded: l_value.round() as i64,
        alpha,
        lhs1,
        rhs1,
        gap1: rhs1 - lhs1,
        lhs2,
        rhs2,
        gap2: rhs2 - lhs2,
    };
    if report.gap1 < -BOUND_REL_TOL * rhs1.max(1.0) {
        return Err(Error::BoundViolation(format!(
            "first bound: lhs {lhs1} exceeds rhs {rhs1}"
        )));
    }
    if report.gap2 < -BOUND_REL_TOL * rhs2.max(1.0) {
        return Err(Error::BoundViolation(format!(
            "second bound: lhs {lhs2} exceeds rhs {rhs2}"
        )));
    }
    Ok(report)
}

/// Splits `z = u * v^T` through its compact SVD so that
/// `(lambda ||u||^(2 alpha) + ||v||^(2 alpha) / lambda) / 2` equals
/// `||z||_*^alpha`: `u = lambda^(-1/(2 alpha)) U sqrt(S)` and
/// `v = lambda^(1/(2 alpha)) V sqrt(S)`.
pub fn trace_norm_split(
    z: &DenseMatrix,
    lambda: f64,
    alpha: f64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let f = tensor::svd(z)?.compact(COMPACT_SVD_REL_TOL);
    let r = f.sigma.len();
    let cu = lambda.powf(-1.0 / (2.0 * alpha));
    let cv = lambda.powf(1.0 / (2.0 * alpha));
    let mut u = DenseMatrix::zeros(z.rows(), r);
    let mut v = DenseMatrix::zeros(z.cols(), r);
    for c in 0..r {
        let s = f.sigma[c].sqrt();
        for row in 0..z.rows() {
            u.set(row, c, cu * f.u.get(row, c) * s);
        }
        for row in 0..z.cols() {
            v.set(row, c, cv * f.v.get(row, c) * s);
        }
    }
    Ok((u, v))
}

/// Builds the decomposition that attains the first bound with equality:
/// compact SVDs `X_(n) = U_n S_n V_n^T` give factor slices `c * U_n sqrt(S_n)`
/// and the core `c^-3 * X x1 (sqrt(S_1)^-1 U_1^T) x2 ... x3 ...`, with
/// `c = (l1/l4)^(-1/(2 alpha))`. The returned model has a single block and a
/// trainable cubic core zero-padded to `P = max` mode rank; a zero input
/// yields the zero model.
pub fn tight_decomposition(
    x: &DenseTensor3,
    l1: f64,
    l4: f64,
    alpha: f64,
) -> Result<TdbModel> {
    if !(l1 > 0.0 && l4 > 0.0) {
        return Err(Error::InvalidConfig(
            "the equality construction needs positive l1 and l4".into(),
        ));
    }
    let (n1, n2, n3) = x.shape();
    let factors: Vec<tensor::Svd> = Mode::ALL
        .into_iter()
        .map(|mode| Ok(tensor::svd(&x.unfold(mode))?.compact(COMPACT_SVD_REL_TOL)))
        .collect::<Result<_>>()?;
    let ranks = [
        factors[0].sigma.len(),
        factors[1].sigma.len(),
        factors[2].sigma.len(),
    ];
    let parts = ranks.iter().copied().max().unwrap_or(0).max(1);

    // zero tensor: zero model (the proof's 0^-1 := 0 convention)
    if ranks.iter().all(|&r| r == 0) {
        let head = EmbeddingTable::zeros(n1, 1, parts);
        let rel = EmbeddingTable::zeros(n2, 1, parts);
        let tail = EmbeddingTable::zeros(n3, 1, parts);
        let core = CoreTensor::new(DenseTensor3::zeros((parts, parts, parts)), true)?;
        return TdbModel::from_parts(PresetKind::Tucker, head, rel, Some(tail), core);
    }

    let c = (l1 / l4).powf(-1.0 / (2.0 * alpha));

    // factor tables: c * U_n sqrt(S_n), zero-padded to `parts` columns
    let table = |f: &tensor::Svd, count: usize| -> EmbeddingTable {
        let r = f.sigma.len();
        let mut t = EmbeddingTable::zeros(count, 1, parts);
        for id in 0..count {
            let row = t.row_mut(id, 0);
            for col in 0..r {
                row[col] = c * f.u.get(id, col) * f.sigma[col].sqrt();
            }
        }
        t
    };
    let head = table(&factors[0], n1);
    let rel = table(&factors[1], n2);
    let tail = table(&factors[2], n3);

    // core: c^-3 * X x_n (sqrt(S_n)^-1 U_n^T), padded to a cube
    let mut core_small = x.clone();
    for (slot, mode) in Mode::ALL.into_iter().enumerate() {
        let f = &factors[slot];
        let r = f.sigma.len();
        let mut proj = DenseMatrix::zeros(r, f.u.rows());
        for row in 0..r {
            let inv_sqrt = 1.0 / f.sigma[row].sqrt();
            for col in 0..f.u.rows() {
                proj.set(row, col, inv_sqrt * f.u.get(col, row));
            }
        }
        core_small = core_small.mode_product(&proj, mode)?;
    }
    let mut core_values = DenseTensor3::zeros((parts, parts, parts));
    for l in 0..ranks[0] {
        for m in 0..ranks[1] {
            for n in 0..ranks[2] {
                core_values.set(l, m, n, core_small.get(l, m, n) * c.powi(-3));
            }
        }
    }
    let core = CoreTensor::new(core_values, true)?;
    TdbModel::from_parts(PresetKind::Tucker, head, rel, Some(tail), core)
}
