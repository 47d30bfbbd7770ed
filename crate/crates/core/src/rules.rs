//! Rank tests deciding which logical rules a core tensor can represent.
//!
//! With tied head/tail embeddings, a core `W` admits a nonzero relation
//! embedding making every relation symmetric iff
//! `rank(W_(2)^T - S W_(2)^T) < P`, antisymmetric iff
//! `rank(W_(2)^T + S W_(2)^T) < P`, and admits inverse relations iff
//! `rank(W_(2)^T) = rank([W_(2)^T, S W_(2)^T])`, where `S` is the
//! permutation swapping the (l, n) index pair of the unfolding's rows.
//! Null-space vectors of the first two matrices are executable witnesses:
//! planting one as a relation row makes scores (anti)symmetric in head/tail.

use crate::model::CoreTensor;
use crate::tensor::{self, DenseMatrix, Mode};
use crate::Result;
use serde::Serialize;

/// The `P^2 x P^2` permutation matrix with a 1 at
/// `((i-1)P + j, (j-1)P + i)` for every pair, one-indexed; it is symmetric
/// and involutive.
pub fn swap_matrix(parts: usize) -> DenseMatrix {
    let p2 = parts * parts;
    let mut s = DenseMatrix::zeros(p2, p2);
    for i in 0..parts {
        for j in 0..parts {
            s.set(i * parts + j, j * parts + i, 1.0);
        }
    }
    s
}

/// Rank diagnostics and verdicts for one core tensor.
#[derive(Clone, Debug, Serialize)]
pub struct LearnabilityReport {
    pub parts: usize,
    pub rank_sym: usize,
    pub rank_anti: usize,
    pub rank_w2: usize,
    pub rank_concat: usize,
    pub symmetry: bool,
    pub antisymmetry: bool,
    pub inverse: bool,
    /// The rank conditions assume tied head/tail embeddings; reports on
    /// cores of untied model families carry this caveat.
    pub assumes_tied: bool,
}

impl LearnabilityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Aligned human-readable rendering.
    pub fn to_text(&self) -> String {
        let verdict = |b: bool| if b { "learnable" } else { "not learnable" };
        let mut out = String::new();
        out.push_str(&format!("parts (P)        {}\n", self.parts));
        out.push_str(&format!(
            "symmetry         {} (rank {} vs P = {})\n",
            verdict(self.symmetry),
            self.rank_sym,
            self.parts
        ));
        out.push_str(&format!(
            "antisymmetry     {} (rank {} vs P = {})\n",
            verdict(self.antisymmetry),
            self.rank_anti,
            self.parts
        ));
        out.push_str(&format!(
            "inverse          {} (rank {} vs concat rank {})\n",
            verdict(self.inverse),
            self.rank_w2,
            self.rank_concat
        ));
        if self.assumes_tied {
            out.push_str("note: verdicts assume tied head/tail embeddings\n");
        }
        out
    }
}

/// `W_(2)^T` of a core: rows indexed by the (l, n) pair with n fastest,
/// columns by m. The row ordering matches [`swap_matrix`].
pub fn core_unfold2_t(core: &CoreTensor) -> DenseMatrix {
    core.values().unfold(Mode::Two).transpose()
}

/// Runs the three rank tests on a core.
pub fn learnability_report(core: &CoreTensor) -> Result<LearnabilityReport> {
    let parts = core.parts();
    let w2t = core_unfold2_t(core);
    let s = swap_matrix(parts);
    let sw2t = s.matmul(&w2t)?;
    let rank_sym = tensor::numerical_rank(&w2t.sub(&sw2t)?)?;
    let rank_anti = tensor::numerical_rank(&w2t.add(&sw2t)?)?;
    let rank_w2 = tensor::numerical_rank(&w2t)?;
    let rank_concat = tensor::numerical_rank(&w2t.concat_cols(&sw2t)?)?;
    Ok(LearnabilityReport {
        parts,
        rank_sym,
        rank_anti,
        rank_w2,
        rank_concat,
        symmetry: rank_sym < parts,
        antisymmetry: rank_anti < parts,
        inverse: rank_w2 == rank_concat,
        assumes_tied: true,
    })
}

/// Which rule a witness makes hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Symmetry,
    Antisymmetry,
}

/// A length-`P` relation pattern whose replication across blocks makes every
/// score (anti)symmetric in head and tail, when the rule is decidable:
/// the unit null-space direction of `W_(2)^T -/+ S W_(2)^T` carrying the
/// smallest singular value.
pub fn rule_witness(core: &CoreTensor, rule: Rule) -> Result<Option<Vec<f64>>> {
    let parts = core.parts();
    let w2t = core_unfold2_t(core);
    let s = swap_matrix(parts);
    let sw2t = s.matmul(&w2t)?;
    let m = match rule {
        Rule::Symmetry => w2t.sub(&sw2t)?,
        Rule::Antisymmetry => w2t.add(&sw2t)?,
    };
    let rank = tensor::numerical_rank(&m)?;
    if rank >= parts {
        return Ok(None);
    }
    if m.frobenius_norm() == 0.0 {
        // any direction works; pick the first basis vector
        let mut e = vec![0.0; parts];
        e[0] = 1.0;
        return Ok(Some(e));
    }
    let f = tensor::svd(&m)?;
    // right singular vector of the smallest singular value
    Ok(Some(f.v.column(f.v.cols() - 1)))
}
