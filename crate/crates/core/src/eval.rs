//! Filtered link-prediction ranking: MRR, MR and Hits@{1,3,10}.
//!
//! Each test triple `(i, j, k)` becomes a tail query `(i, j, ?)`: the model
//! scores every entity as tail, competitors known true from any split are
//! filtered out, and the true tail's rank feeds the aggregate metrics.

use crate::data::{Dataset, Split};
use crate::model::TdbModel;
use crate::Result;
use rayon::prelude::*;
use serde::Serialize;

/// How equal scores are ranked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Count strictly greater scores only (rank 1 when all scores tie).
    #[default]
    Optimistic,
    /// Ties contribute half a rank each.
    Average,
}

impl TieBreak {
    pub fn parse(s: &str) -> crate::Result<Self> {
        match s {
            "optimistic" => Ok(TieBreak::Optimistic),
            "average" => Ok(TieBreak::Average),
            other => Err(crate::Error::InvalidConfig(format!(
                "unknown tie-break `{other}` (expected optimistic or average)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub tie_break: TieBreak,
}

/// Filtered rank of `true_k`: one plus the number of non-filtered competitors
/// scoring strictly higher. `filter` must be sorted ascending; `true_k` is
/// always ranked even when it appears in `filter`.
pub fn filtered_rank(scores: &[f64], true_k: usize, filter: &[usize]) -> usize {
    rank_with(scores, true_k, filter, TieBreak::Optimistic) as usize
}

fn rank_with(scores: &[f64], true_k: usize, filter: &[usize], tie: TieBreak) -> f64 {
    let target = scores[true_k];
    let mut greater = 0usize;
    let mut equal = 0usize;
    for (k, &s) in scores.iter().enumerate() {
        if k == true_k || filter.binary_search(&k).is_ok() {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            equal += 1;
        }
    }
    match tie {
        TieBreak::Optimistic => (1 + greater) as f64,
        TieBreak::Average => 1.0 + greater as f64 + equal as f64 / 2.0,
    }
}

/// Aggregate ranking metrics over one split.
#[derive(Clone, Debug, Serialize)]
pub struct RankingMetrics {
    pub mrr: f64,
    pub mr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

impl RankingMetrics {
    /// Aggregates a list of (possibly fractional) ranks.
    pub fn from_ranks(ranks: &[f64]) -> Self {
        let n = ranks.len();
        let count = n.max(1) as f64;
        let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / count;
        let mr = ranks.iter().sum::<f64>() / count;
        let hits = |c: f64| ranks.iter().filter(|&&r| r <= c).count() as f64 / count;
        Self {
            mrr,
            mr,
            hits1: hits(1.0),
            hits3: hits(3.0),
            hits10: hits(10.0),
            count: n,
        }
    }

    /// Tab-separated report line (preceded by a header line).
    pub fn to_tsv(&self, split: &str) -> String {
        format!(
            "split\tmrr\tmr\thits1\thits3\thits10\tcount\n{}\t{:.6}\t{:.4}\t{:.6}\t{:.6}\t{:.6}\t{}",
            split, self.mrr, self.mr, self.hits1, self.hits3, self.hits10, self.count
        )
    }

    /// Key-value JSON report.
    pub fn to_json(&self, split: &str) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            split: &'a str,
            mrr: f64,
            mr: f64,
            hits1: f64,
            hits3: f64,
            hits10: f64,
            count: usize,
        }
        serde_json::to_string(&Report {
            split,
            mrr: self.mrr,
            mr: self.mr,
            hits1: self.hits1,
            hits3: self.hits3,
            hits10: self.hits10,
            count: self.count,
        })
        .expect("report serializes")
    }
}

/// Filtered ranks for every query of a split, in query order.
pub fn ranks(
    model: &TdbModel,
    data: &Dataset,
    split: Split,
    opts: EvalOptions,
) -> Result<Vec<f64>> {
    data.split(split)
        .par_iter()
        .map(|t| {
            let scores = model.score_all_tails(t.head, t.rel)?;
            let filter = data.filter().tails(t.head, t.rel);
            Ok(rank_with(&scores, t.tail, filter, opts.tie_break))
        })
        .collect()
}

/// Filtered ranking metrics of a model over one split.
pub fn evaluate(
    model: &TdbModel,
    data: &Dataset,
    split: Split,
    opts: EvalOptions,
) -> Result<RankingMetrics> {
    let ranks = ranks(model, data, split, opts)?;
    Ok(RankingMetrics::from_ranks(&ranks))
}
