//! Metrics, model selection, ablation sweeps and the prototype
//! consistency experiment.

mod consistency;
mod pipeline;
mod report;
mod select;
mod sweep;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub use consistency::{consistency_experiment, fit_loglog, ConsistencyCurve};
pub use pipeline::{
    derange, evaluate, fit_classifier, prototypes_for, seeded, train_system, Embedders, EvalOptions, ExperimentConfig,
    ProtoSource, TrainedSystem,
};
pub use report::{config_hash, write_rows_csv, ARTIFACT_HASH_LEN};
pub use select::{apply_grid_point, leave_one_domain_out, GridPoint, HyperGrid, LodoResult};
pub use sweep::{
    ablation_domain_count, ablation_embedding_variant, ablation_prototype_count, ablation_tail_index,
    adaptivity_gap, aggregate, benchmark, lodo_select, run_parallel, seeds_from, Algorithm, AggregateRow, DomainCountMode, GapResult,
    SweepRow,
};

/// Fraction of rows whose label is among the `k` highest logits. Equal
/// logits rank the lower class index first, so `k = 1` agrees with
/// [`crate::adaptive::argmax`].
pub fn accuracy(logits: &Matrix, labels: &[usize], k: usize) -> Result<f64> {
    let (correct, n) = top_k_hits(logits, labels, k)?;
    if n == 0 {
        return Err(Error::Precondition("accuracy over zero rows".into()));
    }
    Ok(correct as f64 / n as f64)
}

/// `(hits, rows)` for top-`k`.
pub fn top_k_hits(logits: &Matrix, labels: &[usize], k: usize) -> Result<(usize, usize)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape(
            "accuracy",
            format!("{} labels for {} rows", labels.len(), logits.rows()),
        ));
    }
    if k == 0 {
        return Err(Error::Config("top-k needs k >= 1".into()));
    }
    let mut hits = 0;
    for (row, &y) in logits.iter_rows().zip(labels) {
        if y >= row.len() {
            return Err(Error::Index(format!("label {y} for {} classes", row.len())));
        }
        let ahead = row
            .iter()
            .enumerate()
            .filter(|&(c, &v)| v > row[y] || (v == row[y] && c < y))
            .count();
        hits += usize::from(ahead < k);
    }
    Ok((hits, labels.len()))
}

/// Accuracy on one domain's labeled points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub domain_id: String,
    pub split: String,
    pub n: usize,
    pub top1: f64,
    pub topk: f64,
}

/// Pooled accuracy over every labeled point of one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub n: usize,
    pub top1: f64,
    pub topk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub seed: u64,
    pub per_domain: Vec<DomainScore>,
    pub train: Option<SplitScore>,
    pub val: Option<SplitScore>,
    pub test: Option<SplitScore>,
    /// Resolved configuration, echoed for provenance.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn split(&self, name: &str) -> Option<SplitScore> {
        match name {
            "train" => self.train,
            "val" => self.val,
            "test" => self.test,
            _ => None,
        }
    }

    /// Test-domain top-1, the headline number.
    pub fn test_top1(&self) -> Result<f64> {
        self.test
            .map(|s| s.top1)
            .ok_or_else(|| Error::Validation("no labeled test domains".into()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("domain,split,n,top1,top{}\n", self.k);
        for d in &self.per_domain {
            out.push_str(&format!("{},{},{},{},{}\n", d.domain_id, d.split, d.n, d.top1, d.topk));
        }
        for (name, s) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if let Some(s) = s {
                out.push_str(&format!("ALL,{name},{},{},{}\n", s.n, s.top1, s.topk));
            }
        }
        out
    }
}
