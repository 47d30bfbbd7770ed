//! Multiclass log-loss training with Adagrad.
//!
//! The loss of a training triplet `(i, j, k)` is
//! `-X[i,j,k] + log(sum_k' exp(X[i,j,k'])) + reg`, with the log-sum-exp over
//! all candidate tails. Gradients are derived by hand and accumulated into
//! dense per-table arrays; see [`batch_gradients`]. Tied head/tail tables
//! receive the sum of both roles' gradients.

use crate::data::{Dataset, Split, Triple};
use crate::eval::{evaluate, EvalOptions};
use crate::model::{ParamId, TdbModel};
use crate::reg::{pow_norm, IvrBlock, RegConfig, RegKind};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::Write;
use std::path::Path;

pub const ADAGRAD_EPS: f64 = 1e-10;

/// Arithmetic width of the optimizer update. `Single` mimics an f32
/// training pipeline by rounding parameters, gradients and accumulators
/// through f32 at each step; numeric test suites need `Double`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    Single,
    #[default]
    Double,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub reg: RegConfig,
    /// Validate every this many epochs; `None` disables validation.
    pub eval_every: Option<usize>,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            batch_size: 100,
            epochs: 200,
            seed: 0,
            reg: RegConfig::none(),
            eval_every: Some(5),
            precision: Precision::Double,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.eval_every == Some(0) {
            return Err(Error::InvalidConfig(
                "eval_every must be positive (or disabled)".into(),
            ));
        }
        self.reg.validate()
    }
}

/// Stable `-scores[k] + logsumexp(scores) + penalty` via the max-shift form.
pub fn loss_triplet(scores: &[f64], k: usize, penalty: f64) -> f64 {
    -scores[k] + log_sum_exp(scores) + penalty
}

pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
    max + sum.ln()
}

/// Dense gradient arrays mirroring a model's parameters. On tied models the
/// head array carries both roles.
#[derive(Clone, Debug)]
pub struct Gradients {
    head: Vec<f64>,
    rel: Vec<f64>,
    tail: Option<Vec<f64>>,
    core: Option<Vec<f64>>,
    parts: usize,
    blocks: usize,
}

impl Gradients {
    pub fn zeros_like(model: &TdbModel) -> Self {
        Self {
            head: vec![0.0; model.head().values().len()],
            rel: vec![0.0; model.rel().values().len()],
            tail: (!model.tied()).then(|| vec![0.0; model.tail().values().len()]),
            core: model
                .core()
                .trainable()
                .then(|| vec![0.0; model.core().values().values().len()]),
            parts: model.parts(),
            blocks: model.blocks(),
        }
    }

    pub fn param(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::Head => &self.head,
            ParamId::Rel => &self.rel,
            ParamId::Tail => self.tail.as_deref().expect("untied gradients"),
            ParamId::Core => self.core.as_deref().expect("trainable core"),
        }
    }

    #[inline]
    fn row_offset(&self, id: usize, block: usize) -> usize {
        (id * self.blocks + block) * self.parts
    }

    #[inline]
    fn head_row(&mut self, id: usize, block: usize) -> &mut [f64] {
        let o = self.row_offset(id, block);
        &mut self.head[o..o + self.parts]
    }

    #[inline]
    fn rel_row(&mut self, id: usize, block: usize) -> &mut [f64] {
        let o = self.row_offset(id, block);
        &mut self.rel[o..o + self.parts]
    }

    /// Tail-role row; lands in the head array on tied models.
    #[inline]
    fn tail_row(&mut self, id: usize, block: usize) -> &mut [f64] {
        let o = self.row_offset(id, block);
        match &mut self.tail {
            Some(t) => &mut t[o..o + self.parts],
            None => &mut self.head[o..o + self.parts],
        }
    }
}

/// Gradients of the summed batch loss plus the mean per-triplet loss.
pub struct BatchGrads {
    pub grads: Gradients,
    pub mean_loss: f64,
}

/// Hand-derived gradients of `sum over batch of loss_triplet` with respect
/// to every touched embedding row and, when trainable, the core.
pub fn batch_gradients(model: &TdbModel, batch: &[Triple], cfg: &TrainConfig) -> Result<BatchGrads> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let p = model.parts();
    let blocks = model.blocks();
    let n_ent = model.tail().count();
    let w = model.core().values().values();
    let mut grads = Gradients::zeros_like(model);
    let mut total_loss = 0.0;

    // per-block forward intermediates
    let mut ys = vec![0.0; blocks * p * p]; // (W x1 h) per block, layout m*p+n
    let mut vs = vec![0.0; blocks * p]; // (W x1 h x2 r) per block
    let mut scores = vec![0.0; n_ent];
    let mut g = vec![0.0; n_ent];
    let mut u = vec![0.0; p];

    for t in batch {
        let (i, j, k) = (t.head, t.rel, t.tail);
        model.score_triplet(i, j, k)?; // id validation

        // forward
        scores.iter_mut().for_each(|s| *s = 0.0);
        for d in 0..blocks {
            let h = model.head().row(i, d);
            let r = model.rel().row(j, d);
            let y = &mut ys[d * p * p..(d + 1) * p * p];
            y.iter_mut().for_each(|x| *x = 0.0);
            for (l, &hl) in h.iter().enumerate() {
                if hl == 0.0 {
                    continue;
                }
                let wbase = l * p * p;
                for mn in 0..p * p {
                    y[mn] += hl * w[wbase + mn];
                }
            }
            let v = &mut vs[d * p..(d + 1) * p];
            v.iter_mut().for_each(|x| *x = 0.0);
            for (m, &rm) in r.iter().enumerate() {
                if rm == 0.0 {
                    continue;
                }
                for n in 0..p {
                    v[n] += rm * y[m * p + n];
                }
            }
            for (kk, s) in scores.iter_mut().enumerate() {
                *s += crate::model::dot(v, model.tail().row(kk, d));
            }
        }
        let lse = log_sum_exp(&scores);
        total_loss += -scores[k] + lse;

        // softmax residual
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
        for (gk, &s) in g.iter_mut().zip(&scores) {
            *gk = (s - max).exp() / denom;
        }
        g[k] -= 1.0;

        // score backward
        for d in 0..blocks {
            let y = &ys[d * p * p..(d + 1) * p * p];
            let v = &vs[d * p..(d + 1) * p];
            u.iter_mut().for_each(|x| *x = 0.0);
            for (kk, &gk) in g.iter().enumerate() {
                if gk == 0.0 {
                    continue;
                }
                let trow = model.tail().row(kk, d);
                for (un, &tn) in u.iter_mut().zip(trow) {
                    *un += gk * tn;
                }
                let grow = grads.tail_row(kk, d);
                for (gt, &vn) in grow.iter_mut().zip(v) {
                    *gt += gk * vn;
                }
            }
            let h = model.head().row(i, d);
            let r = model.rel().row(j, d);
            {
                // dL/dh[l] = sum_{m,n} W[l,m,n] r[m] u[n]
                let gh = grads.head_row(i, d);
                for l in 0..p {
                    let mut acc = 0.0;
                    for (m, &rm) in r.iter().enumerate() {
                        if rm == 0.0 {
                            continue;
                        }
                        let base = (l * p + m) * p;
                        for (n, &un) in u.iter().enumerate() {
                            acc += w[base + n] * rm * un;
                        }
                    }
                    gh[l] += acc;
                }
            }
            {
                // dL/dr[m] = sum_n y[m,n] u[n]
                let gr = grads.rel_row(j, d);
                for m in 0..p {
                    let mut acc = 0.0;
                    for (n, &un) in u.iter().enumerate() {
                        acc += y[m * p + n] * un;
                    }
                    gr[m] += acc;
                }
            }
            if let Some(gw) = grads.core.as_mut() {
                // dL/dW[l,m,n] = h[l] r[m] u[n]
                for (l, &hl) in h.iter().enumerate() {
                    if hl == 0.0 {
                        continue;
                    }
                    for (m, &rm) in r.iter().enumerate() {
                        let c = hl * rm;
                        if c == 0.0 {
                            continue;
                        }
                        let base = (l * p + m) * p;
                        for (n, &un) in u.iter().enumerate() {
                            gw[base + n] += c * un;
                        }
                    }
                }
            }
        }

        // regularizer value and backward
        total_loss += penalty_backward(model, t, &cfg.reg, &mut grads);
    }

    Ok(BatchGrads {
        grads,
        mean_loss: total_loss / batch.len() as f64,
    })
}

/// `alpha * ||x||^(alpha-2)` from the squared norm, the scalar factor of
/// every powered-norm gradient; zero at the origin.
#[inline]
fn pow_coef(sq: f64, alpha: f64) -> f64 {
    if sq == 0.0 {
        0.0
    } else {
        alpha * sq.powf((alpha - 2.0) / 2.0)
    }
}

/// Adds the penalty gradient of one triplet into `grads` and returns the
/// penalty value.
fn penalty_backward(model: &TdbModel, t: &Triple, reg: &RegConfig, grads: &mut Gradients) -> f64 {
    let (i, j, k) = (t.head, t.rel, t.tail);
    match reg.kind {
        RegKind::None => 0.0,
        RegKind::F2 => {
            let lambda = reg.l1;
            let mut value = 0.0;
            for d in 0..model.blocks() {
                let h = model.head().row(i, d).to_vec();
                for (gv, hv) in grads.head_row(i, d).iter_mut().zip(&h) {
                    *gv += 2.0 * lambda * hv;
                }
                let r = model.rel().row(j, d).to_vec();
                for (gv, rv) in grads.rel_row(j, d).iter_mut().zip(&r) {
                    *gv += 2.0 * lambda * rv;
                }
                let tl = model.tail().row(k, d).to_vec();
                for (gv, tv) in grads.tail_row(k, d).iter_mut().zip(&tl) {
                    *gv += 2.0 * lambda * tv;
                }
                value += h.iter().map(|v| v * v).sum::<f64>()
                    + r.iter().map(|v| v * v).sum::<f64>()
                    + tl.iter().map(|v| v * v).sum::<f64>();
            }
            lambda * value
        }
        RegKind::N3 => {
            let lambda = reg.l1;
            let mut value = 0.0;
            for d in 0..model.blocks() {
                let h = model.head().row(i, d).to_vec();
                for (gv, hv) in grads.head_row(i, d).iter_mut().zip(&h) {
                    *gv += 3.0 * lambda * hv.abs() * hv;
                }
                let r = model.rel().row(j, d).to_vec();
                for (gv, rv) in grads.rel_row(j, d).iter_mut().zip(&r) {
                    *gv += 3.0 * lambda * rv.abs() * rv;
                }
                let tl = model.tail().row(k, d).to_vec();
                for (gv, tv) in grads.tail_row(k, d).iter_mut().zip(&tl) {
                    *gv += 3.0 * lambda * tv.abs() * tv;
                }
                value += h.iter().map(|v| v.abs().powi(3)).sum::<f64>()
                    + r.iter().map(|v| v.abs().powi(3)).sum::<f64>()
                    + tl.iter().map(|v| v.abs().powi(3)).sum::<f64>();
            }
            lambda * value
        }
        RegKind::Ivr => ivr_backward(model, t, reg, grads),
    }
}

fn sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn ivr_backward(model: &TdbModel, t: &Triple, reg: &RegConfig, grads: &mut Gradients) -> f64 {
    let (i, j, k) = (t.head, t.rel, t.tail);
    let p = model.parts();
    let w = model.core().values().values();
    let alpha = reg.alpha;
    let mut value = 0.0;
    let mut gh = vec![0.0; p];
    let mut gr = vec![0.0; p];
    let mut gt = vec![0.0; p];

    for d in 0..model.blocks() {
        let h = model.head().row(i, d);
        let r = model.rel().row(j, d);
        let tl = model.tail().row(k, d);
        gh.iter_mut().for_each(|x| *x = 0.0);
        gr.iter_mut().for_each(|x| *x = 0.0);
        gt.iter_mut().for_each(|x| *x = 0.0);

        let (sh, sr, st) = (sq(h), sq(r), sq(tl));
        let (ph, pr, pt) = (
            pow_norm(sh, alpha),
            pow_norm(sr, alpha),
            pow_norm(st, alpha),
        );
        let (ch, cr, ct) = (
            pow_coef(sh, alpha),
            pow_coef(sr, alpha),
            pow_coef(st, alpha),
        );

        // row norms
        value += reg.l1 * (ph + pr + pt);
        for l in 0..p {
            gh[l] += reg.l1 * ch * h[l];
            gr[l] += reg.l1 * cr * r[l];
            gt[l] += reg.l1 * ct * tl[l];
        }

        // pairwise norm products
        value += reg.l2 * (pt * pr + pt * ph + pr * ph);
        for l in 0..p {
            gh[l] += reg.l2 * ch * h[l] * (pt + pr);
            gr[l] += reg.l2 * cr * r[l] * (pt + ph);
            gt[l] += reg.l2 * ct * tl[l] * (pr + ph);
        }

        let blk = IvrBlock::compute(w, p, h, r, tl);
        let (sy, sz, sq_) = (sq(&blk.y), sq(&blk.z), sq(&blk.q));
        let (sa, sb, sc) = (sq(&blk.a), sq(&blk.b), sq(&blk.c));

        // single contractions
        value += reg.l3 * (pow_norm(sy, alpha) + pow_norm(sz, alpha) + pow_norm(sq_, alpha));
        let (cy, cz, cq) = (
            pow_coef(sy, alpha),
            pow_coef(sz, alpha),
            pow_coef(sq_, alpha),
        );
        let gw = grads.core.as_mut();
        let mut gw_local: Option<&mut Vec<f64>> = gw;
        for l in 0..p {
            for m in 0..p {
                for n in 0..p {
                    let wv = w[(l * p + m) * p + n];
                    let (yv, zv, qv) = (blk.y[m * p + n], blk.z[l * p + n], blk.q[l * p + m]);
                    if wv != 0.0 {
                        gh[l] += reg.l3 * cy * yv * wv;
                        gr[m] += reg.l3 * cz * zv * wv;
                        gt[n] += reg.l3 * cq * qv * wv;
                    }
                    if let Some(gw) = gw_local.as_deref_mut() {
                        gw[(l * p + m) * p + n] +=
                            reg.l3 * (cy * yv * h[l] + cz * zv * r[m] + cq * qv * tl[n]);
                    }
                }
            }
        }

        // double contractions
        value += reg.l4 * (pow_norm(sa, alpha) + pow_norm(sb, alpha) + pow_norm(sc, alpha));
        let (ca, cb, cc) = (
            pow_coef(sa, alpha),
            pow_coef(sb, alpha),
            pow_coef(sc, alpha),
        );
        for l in 0..p {
            for m in 0..p {
                let qlm = blk.q[l * p + m];
                // a = W x2 r x3 t: d/dr[m] via q, d/dW via r t
                gr[m] += reg.l4 * ca * blk.a[l] * qlm;
                // b = W x3 t x1 h: d/dh[l] via q
                gh[l] += reg.l4 * cb * blk.b[m] * qlm;
            }
            for n in 0..p {
                let zln = blk.z[l * p + n];
                // a: d/dt[n] via z
                gt[n] += reg.l4 * ca * blk.a[l] * zln;
                // c = W x1 h x2 r: d/dh[l] via z
                gh[l] += reg.l4 * cc * blk.c[n] * zln;
            }
        }
        for m in 0..p {
            for n in 0..p {
                let ymn = blk.y[m * p + n];
                // b: d/dt[n] via y
                gt[n] += reg.l4 * cb * blk.b[m] * ymn;
                // c: d/dr[m] via y
                gr[m] += reg.l4 * cc * blk.c[n] * ymn;
            }
        }
        if let Some(gw) = gw_local.as_deref_mut() {
            for l in 0..p {
                for m in 0..p {
                    for n in 0..p {
                        gw[(l * p + m) * p + n] += reg.l4
                            * (ca * blk.a[l] * r[m] * tl[n]
                                + cb * h[l] * blk.b[m] * tl[n]
                                + cc * h[l] * r[m] * blk.c[n]);
                    }
                }
            }
        }

        for (gv, &x) in grads.head_row(i, d).iter_mut().zip(&gh) {
            *gv += x;
        }
        for (gv, &x) in grads.rel_row(j, d).iter_mut().zip(&gr) {
            *gv += x;
        }
        for (gv, &x) in grads.tail_row(k, d).iter_mut().zip(&gt) {
            *gv += x;
        }
    }
    value
}

/// Per-parameter accumulated squared gradients.
#[derive(Clone, Debug)]
pub struct AdagradState {
    accum: Vec<Vec<f64>>,
    ids: Vec<ParamId>,
    pub eps: f64,
}

impl AdagradState {
    pub fn new(model: &TdbModel) -> Self {
        let ids = model.param_ids();
        let accum = ids.iter().map(|&id| vec![0.0; model.param(id).len()]).collect();
        Self {
            accum,
            ids,
            eps: ADAGRAD_EPS,
        }
    }

    pub fn accum(&self, id: ParamId) -> &[f64] {
        let slot = self.ids.iter().position(|&x| x == id).expect("known param");
        &self.accum[slot]
    }

    /// `accum += g^2; theta -= lr * g / (sqrt(accum) + eps)`, elementwise.
    pub fn apply(&mut self, model: &mut TdbModel, grads: &Gradients, lr: f64, precision: Precision) {
        for (slot, &id) in self.ids.iter().enumerate() {
            let acc = &mut self.accum[slot];
            let theta = model.param_mut(id);
            let g = grads.param(id);
            match precision {
                Precision::Double => {
                    for ((t, a), &gv) in theta.iter_mut().zip(acc.iter_mut()).zip(g) {
                        *a += gv * gv;
                        *t -= lr * gv / (a.sqrt() + self.eps);
                    }
                }
                Precision::Single => {
                    let lr32 = lr as f32;
                    let eps32 = self.eps as f32;
                    for ((t, a), &gv) in theta.iter_mut().zip(acc.iter_mut()).zip(g) {
                        let g32 = gv as f32;
                        let a32 = *a as f32 + g32 * g32;
                        *a = a32 as f64;
                        let t32 = *t as f32 - lr32 * g32 / (a32.sqrt() + eps32);
                        *t = t32 as f64;
                    }
                }
            }
        }
    }
}

/// One row of the training trace.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

pub struct FitOutcome {
    /// Best-validation snapshot when validation ran, otherwise the final model.
    pub model: TdbModel,
    pub trace: Vec<EpochStats>,
}

/// Runs `epochs` passes of shuffled minibatch Adagrad. Emits one
/// `epoch<TAB>loss<TAB>valid_mrr` line per epoch to stdout and, when given,
/// appends the same line to `log_path`.
pub fn fit(
    model: TdbModel,
    data: &Dataset,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let mut model = model;
    let mut state = AdagradState::new(&model);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train().len()).collect();
    let mut best: Option<(f64, TdbModel)> = None;
    let mut trace = Vec::with_capacity(cfg.epochs);

    let mut log_file = match log_path {
        Some(path) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| Error::Io {
                    path: path.display().to_string(),
                    source,
                })?,
        ),
        None => None,
    };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Triple> = chunk.iter().map(|&ix| data.train()[ix]).collect();
            let out = batch_gradients(&model, &batch, cfg)?;
            if !out.mean_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            state.apply(&mut model, &out.grads, cfg.lr, cfg.precision);
            loss_sum += out.mean_loss * batch.len() as f64;
            seen += batch.len();
        }
        let loss = loss_sum / seen.max(1) as f64;

        let run_valid = cfg.eval_every.is_some_and(|every| {
            !data.valid().is_empty() && (epoch % every == 0 || epoch == cfg.epochs)
        });
        let valid_mrr = if run_valid {
            let mrr = evaluate(&model, data, Split::Valid, EvalOptions::default())?.mrr;
            if best.as_ref().map_or(true, |(b, _)| mrr > *b) {
                best = Some((mrr, model.clone()));
            }
            Some(mrr)
        } else {
            None
        };

        let line = match valid_mrr {
            Some(mrr) => format!("{epoch}\t{loss:.6e}\t{mrr:.6}"),
            None => format!("{epoch}\t{loss:.6e}\t-"),
        };
        println!("{line}");
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{line}").map_err(|source| Error::Io {
                path: log_path.unwrap().display().to_string(),
                source,
            })?;
        }
        trace.push(EpochStats {
            epoch,
            loss,
            valid_mrr,
        });
    }

    let model = match best {
        Some((_, snapshot)) => snapshot,
        None => model,
    };
    Ok(FitOutcome { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelPreset, PresetKind};
    use crate::reg::penalty;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    /// Random model with O(1) parameter scale so finite differences are
    /// well-conditioned.
    fn fd_model(kind: PresetKind, ents: usize, rels: usize, dim: usize, seed: u64) -> TdbModel {
        let preset = ModelPreset::new(kind, dim);
        let mut model = TdbModel::new_zero(&preset, ents, rels, dim).unwrap();
        let mut r = rng(seed);
        for id in model.param_ids() {
            for v in model.param_mut(id) {
                *v = r.random_range(-0.8..0.8);
            }
        }
        model
    }

    /// Forward-only total batch loss, the quantity whose gradient
    /// `batch_gradients` computes.
    fn batch_loss(model: &TdbModel, batch: &[Triple], cfg: &TrainConfig) -> f64 {
        batch
            .iter()
            .map(|t| {
                let scores = model.score_all_tails(t.head, t.rel).unwrap();
                let pen = penalty(model, (t.head, t.rel, t.tail), &cfg.reg).unwrap();
                loss_triplet(&scores, t.tail, pen)
            })
            .sum()
    }

    fn check_gradients(kind: PresetKind, dim: usize, cfg: &TrainConfig, seed: u64) {
        let model = fd_model(kind, 4, 3, dim, seed);
        let batch = vec![
            Triple {
                head: 0,
                rel: 1,
                tail: 2,
            },
            Triple {
                head: 3,
                rel: 0,
                tail: 3,
            },
        ];
        let out = batch_gradients(&model, &batch, cfg).unwrap();
        let h = 1e-5;
        for id in model.param_ids() {
            let len = model.param(id).len();
            for ix in 0..len {
                let mut plus = model.clone();
                plus.param_mut(id)[ix] += h;
                let mut minus = model.clone();
                minus.param_mut(id)[ix] -= h;
                let fd = (batch_loss(&plus, &batch, cfg) - batch_loss(&minus, &batch, cfg))
                    / (2.0 * h);
                let an = out.grads.param(id)[ix];
                let denom = an.abs().max(fd.abs()).max(1e-4);
                assert!(
                    (an - fd).abs() / denom <= 1e-5,
                    "{kind:?} {id:?}[{ix}]: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn loss_triplet_uniform_scores() {
        let n = 7;
        let scores = vec![0.25; n];
        let got = loss_triplet(&scores, 3, 0.0);
        assert!((got - (n as f64).ln()).abs() < 1e-14);
        assert!((loss_triplet(&[0.0, 0.0], 0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_triplet_matches_compensated_oracle() {
        // Neumaier-compensated ascending summation as an independent
        // higher-accuracy route.
        let mut r = rng(3);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..40).map(|_| r.random_range(-6.0..6.0)).collect();
            let k = r.random_range(0..scores.len());
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut terms: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
            terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for t in terms {
                let s = sum + t;
                if sum.abs() >= t.abs() {
                    comp += (sum - s) + t;
                } else {
                    comp += (t - s) + sum;
                }
                sum = s;
            }
            let want = max + (sum + comp).ln() - scores[k];
            let got = loss_triplet(&scores, k, 0.0);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
            assert!(got >= -1e-12, "loss minus penalty must be non-negative");
        }
    }

    #[test]
    fn loss_invariant_under_constant_shift() {
        let scores = vec![0.3, -1.2, 2.4, 0.0, 0.7];
        let shifted: Vec<f64> = scores.iter().map(|s| s + 123.456).collect();
        let a = loss_triplet(&scores, 2, 0.0);
        let b = loss_triplet(&shifted, 2, 0.0);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn zero_model_has_zero_gradients_and_uniform_loss() {
        let preset = ModelPreset::new(PresetKind::Tucker, 3);
        let model = TdbModel::new_zero(&preset, 4, 2, 3).unwrap();
        let cfg = TrainConfig {
            reg: RegConfig::ivr(2.0, 0.5, 0.0),
            ..TrainConfig::default()
        };
        let batch = vec![Triple {
            head: 0,
            rel: 0,
            tail: 1,
        }];
        let out = batch_gradients(&model, &batch, &cfg).unwrap();
        assert!((out.mean_loss - 4f64.ln()).abs() < 1e-14);
        for id in model.param_ids() {
            assert!(out.grads.param(id).iter().all(|&g| g == 0.0), "{id:?}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_no_reg() {
        for kind in PresetKind::ALL {
            let dim = kind.default_parts(4).max(1) * 2;
            let cfg = TrainConfig::default();
            check_gradients(kind, dim, &cfg, 11);
        }
    }

    #[test]
    fn gradients_match_finite_differences_f2_n3() {
        for (kind, reg) in [
            (PresetKind::Cp, RegConfig::f2(0.13)),
            (PresetKind::Tucker, RegConfig::f2(0.2)),
            (PresetKind::Complex, RegConfig::n3(0.17)),
            (PresetKind::Quate, RegConfig::n3(0.31)),
        ] {
            let dim = kind.default_parts(3).max(1) * 2;
            let cfg = TrainConfig {
                reg,
                ..TrainConfig::default()
            };
            check_gradients(kind, dim, &cfg, 13);
        }
    }

    #[test]
    fn gradients_match_finite_differences_ivr() {
        for kind in PresetKind::ALL {
            let dim = kind.default_parts(3).max(1) * 2;
            for alpha in [2.0, 2.25, 3.0] {
                let cfg = TrainConfig {
                    reg: RegConfig::ivr_all(alpha, 0.11, 0.07, 0.05, 0.13),
                    ..TrainConfig::default()
                };
                check_gradients(kind, dim, &cfg, 17);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_tucker_core() {
        let cfg = TrainConfig {
            reg: RegConfig::ivr(2.0, 0.1, 0.1),
            ..TrainConfig::default()
        };
        check_gradients(PresetKind::Tucker, 2, &cfg, 19);
    }

    #[test]
    fn tied_gradients_sum_both_roles() {
        // triplet (0, 0, 0) on a tied model: the storage row receives head
        // plus tail contributions; compare against finite differences.
        let model = fd_model(PresetKind::DistMult, 3, 2, 3, 23);
        let cfg = TrainConfig {
            reg: RegConfig::f2(0.21),
            ..TrainConfig::default()
        };
        let batch = vec![Triple {
            head: 0,
            rel: 0,
            tail: 0,
        }];
        let out = batch_gradients(&model, &batch, &cfg).unwrap();
        let h = 1e-5;
        for ix in 0..3 {
            let mut plus = model.clone();
            plus.param_mut(ParamId::Head)[ix] += h;
            let mut minus = model.clone();
            minus.param_mut(ParamId::Head)[ix] -= h;
            let fd =
                (batch_loss(&plus, &batch, &cfg) - batch_loss(&minus, &batch, &cfg)) / (2.0 * h);
            let an = out.grads.param(ParamId::Head)[ix];
            assert!((an - fd).abs() / an.abs().max(fd.abs()).max(1e-4) <= 1e-5);
        }
    }

    #[test]
    fn adagrad_zero_gradient_is_a_no_op() {
        let mut model = fd_model(PresetKind::Complex, 3, 2, 4, 29);
        let before = model.param(ParamId::Head).to_vec();
        let grads = Gradients::zeros_like(&model);
        let mut state = AdagradState::new(&model);
        state.apply(&mut model, &grads, 0.1, Precision::Double);
        assert_eq!(model.param(ParamId::Head), &before[..]);
    }

    #[test]
    fn adagrad_first_and_second_steps() {
        let preset = ModelPreset::new(PresetKind::Cp, 1);
        let mut model = TdbModel::new_zero(&preset, 1, 1, 1).unwrap();
        let mut grads = Gradients::zeros_like(&model);
        grads.head[0] = 1.0;
        let mut state = AdagradState::new(&model);
        state.apply(&mut model, &grads, 0.1, Precision::Double);
        let first = model.param(ParamId::Head)[0];
        assert!((first + 0.1).abs() < 1e-9, "first step ~ -0.1, got {first}");
        state.apply(&mut model, &grads, 0.1, Precision::Double);
        let second = model.param(ParamId::Head)[0] - first;
        assert!(
            (second + 0.1 / 2f64.sqrt()).abs() < 1e-9,
            "second step ~ -0.1/sqrt(2), got {second}"
        );
    }

    #[test]
    fn adagrad_steps_shrink_for_constant_gradient() {
        let preset = ModelPreset::new(PresetKind::Cp, 1);
        let mut model = TdbModel::new_zero(&preset, 1, 1, 1).unwrap();
        let mut grads = Gradients::zeros_like(&model);
        grads.head[0] = 0.7;
        let mut state = AdagradState::new(&model);
        let mut prev = f64::INFINITY;
        let mut last = 0.0;
        for _ in 0..5 {
            let before = model.param(ParamId::Head)[0];
            state.apply(&mut model, &grads, 0.1, Precision::Double);
            let step = (model.param(ParamId::Head)[0] - before).abs();
            assert!(step <= prev + 1e-15);
            prev = step;
            last = step;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn single_precision_update_rounds_through_f32() {
        let preset = ModelPreset::new(PresetKind::Cp, 1);
        let mut model = TdbModel::new_zero(&preset, 1, 1, 1).unwrap();
        model.param_mut(ParamId::Head)[0] = 1.0 / 3.0;
        let mut grads = Gradients::zeros_like(&model);
        grads.head[0] = 0.1;
        let mut state = AdagradState::new(&model);
        state.apply(&mut model, &grads, 0.1, Precision::Single);
        let got = model.param(ParamId::Head)[0];
        assert_eq!(got, got as f32 as f64, "parameter must be f32-representable");
    }

    fn tiny_dataset() -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("train.txt"),
            "a\tr\tb\nb\tr\tc\nc\tr\td\nd\tr\ta\na\ts\tc\nb\ts\td\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("valid.txt"), "c\ts\ta\n").unwrap();
        std::fs::write(dir.path().join("test.txt"), "d\ts\tb\n").unwrap();
        let data = crate::data::load_dataset(dir.path()).unwrap();
        (dir, data)
    }

    #[test]
    fn non_finite_loss_aborts_with_context() {
        let (_dir, data) = tiny_dataset();
        let preset = ModelPreset::new(PresetKind::DistMult, 2);
        let mut model = TdbModel::new_zero(&preset, 4, 2, 2).unwrap();
        model.param_mut(ParamId::Head)[0] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        match fit(model, &data, &cfg, None) {
            Err(Error::NonFiniteLoss { epoch, batch }) => {
                assert_eq!(epoch, 1);
                assert_eq!(batch, 0);
            }
            Err(other) => panic!("expected a non-finite loss abort, got {other:?}"),
            Ok(_) => panic!("expected a non-finite loss abort, training succeeded"),
        }
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let (_dir, data) = tiny_dataset();
        let preset = ModelPreset::new(PresetKind::Complex, 4);
        let model = TdbModel::new_random(&preset, 4, 2, 4, &mut rng(5)).unwrap();
        let before = model.param(ParamId::Head).to_vec();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = fit(model, &data, &cfg, None).unwrap();
        assert_eq!(out.model.param(ParamId::Head), &before[..]);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn fixed_seed_gives_bit_identical_traces() {
        let (_dir, data) = tiny_dataset();
        let preset = ModelPreset::new(PresetKind::Simple, 4);
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 3,
            seed: 42,
            reg: RegConfig::ivr(2.0, 0.01, 0.01),
            eval_every: Some(2),
            ..TrainConfig::default()
        };
        let run = || {
            let model = TdbModel::new_random(&preset, 4, 2, 4, &mut rng(42)).unwrap();
            fit(model, &data, &cfg, None).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.trace, b.trace);
        assert_eq!(
            a.model.param(ParamId::Head),
            b.model.param(ParamId::Head)
        );
    }

    #[test]
    fn training_reduces_loss_on_tiny_graph() {
        let (_dir, data) = tiny_dataset();
        let preset = ModelPreset::new(PresetKind::Tucker, 4);
        let model = TdbModel::new_random(&preset, 4, 2, 4, &mut rng(7)).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 6,
            eval_every: None,
            ..TrainConfig::default()
        };
        let out = fit(model, &data, &cfg, None).unwrap();
        let first = out.trace.first().unwrap().loss;
        let last = out.trace.last().unwrap().loss;
        assert!(last < first, "loss should fall: {first} -> {last}");
    }

    #[test]
    fn log_file_receives_epoch_lines() {
        let (_dir, data) = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("train.log");
        let preset = ModelPreset::new(PresetKind::DistMult, 2);
        let model = TdbModel::new_random(&preset, 4, 2, 2, &mut rng(9)).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            eval_every: Some(1),
            ..TrainConfig::default()
        };
        fit(model, &data, &cfg, Some(&log)).unwrap();
        let text = std::fs::read_to_string(&log).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("1\t"));
        assert_eq!(lines[2].split('\t').count(), 3);
    }
}
