use serde::Serialize;
use sha2::{Digest, Sha256};

use super::sweep::{AggregateRow, SweepRow};

/// Hex characters of the config digest embedded in artifact names.
pub const ARTIFACT_HASH_LEN: usize = 12;

/// Leading hex digits of the SHA-256 of `value`'s compact JSON.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    hex::encode(digest)[..ARTIFACT_HASH_LEN].to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line per run, then one aggregate line per (setting, algorithm).
pub fn write_rows_csv(rows: &[SweepRow], aggregates: &[AggregateRow], k: usize) -> String {
    let mut out = format!("row,setting,algorithm,seed,n_seeds,top1,top1_std,top{k},top{k}_std\n");
    for r in rows {
        out.push_str(&format!(
            "run,{},{},{},1,{},,{},\n",
            r.setting, r.algorithm, r.seed, r.top1, r.topk
        ));
    }
    for a in aggregates {
        out.push_str(&format!(
            "mean,{},{},,{},{},{},{},{}\n",
            a.setting,
            a.algorithm,
            a.n_seeds,
            a.top1_mean,
            opt(a.top1_std),
            a.topk_mean,
            opt(a.topk_std)
        ));
    }
    out
}
