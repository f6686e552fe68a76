//! Hyperparameter grids and leave-one-domain-out selection.

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParam {
    pub name: String,
    pub values: Vec<f64>,
}

/// Cartesian product of named value lists; the last parameter varies
/// fastest.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    pub params: Vec<GridParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub values: Vec<(String, f64)>,
}

impl GridPoint {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|p| p.1)
    }
}

impl HyperGrid {
    pub fn new(params: &[(&str, &[f64])]) -> Self {
        HyperGrid {
            params: params
                .iter()
                .map(|(n, v)| GridParam {
                    name: n.to_string(),
                    values: v.to_vec(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        if self.params.is_empty() {
            0
        } else {
            self.params.iter().map(|p| p.values.len()).product()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<GridPoint> {
        let n = self.len();
        (0..n)
            .map(|mut i| {
                let mut values = vec![(String::new(), 0.0); self.params.len()];
                for (slot, p) in values.iter_mut().zip(&self.params).rev() {
                    *slot = (p.name.clone(), p.values[i % p.values.len()]);
                    i /= p.values.len();
                }
                GridPoint { values }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodoResult {
    pub best_index: usize,
    pub best: GridPoint,
    /// `scores[p][i]`: grid point `p` validated on held-out domain `i`.
    pub scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
}

/// For each grid point, hold out each domain in turn, train on the rest
/// and score on the held-out one. The point with the best mean score wins;
/// ties go to the earlier point.
pub fn leave_one_domain_out<T, F>(domains: &[T], grid: &HyperGrid, mut trainer: F) -> Result<LodoResult>
where
    F: FnMut(&GridPoint, &[&T], &T) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::Config("hyperparameter grid is empty".into()));
    }
    if domains.len() < 2 {
        return Err(Error::Precondition(format!(
            "leave-one-domain-out needs at least 2 domains, got {}",
            domains.len()
        )));
    }
    let points = grid.points();
    let mut scores = Vec::with_capacity(points.len());
    for p in &points {
        let mut row = Vec::with_capacity(domains.len());
        for held in 0..domains.len() {
            let rest: Vec<&T> = domains
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != held)
                .map(|(_, d)| d)
                .collect();
            row.push(trainer(p, &rest, &domains[held])?);
        }
        scores.push(row);
    }
    let mean_scores: Vec<f64> = scores
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    let mut best_index = 0;
    for (i, &s) in mean_scores.iter().enumerate() {
        if s > mean_scores[best_index] {
            best_index = i;
        }
    }
    Ok(LodoResult {
        best_index,
        best: points[best_index].clone(),
        scores,
        mean_scores,
    })
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("{name} must be a whole number, got {v}")))
    }
}

/// Overwrite the named fields of `cfg` with a grid point's values.
pub fn apply_grid_point(cfg: &ExperimentConfig, point: &GridPoint) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    for (name, v) in &point.values {
        let v = *v;
        match name.as_str() {
            "learning_rate" => c.train.sgd.learning_rate = v,
            "weight_decay" => c.train.sgd.weight_decay = v,
            "penalty_weight" => c.train.penalty_weight = v,
            "rounds" => c.train.rounds = as_count(name, v)?,
            "batch_per_domain" => c.train.batch_per_domain = as_count(name, v)?,
            "d_feat" => c.train.d_feat = as_count(name, v)?,
            "d_mlp" => c.train.d_mlp = as_count(name, v)?,
            "embed_dim" => c.proto.embed_dim = as_count(name, v)?,
            "proto_learning_rate" => c.proto.sgd.learning_rate = v,
            "proto_rounds" => c.proto.rounds = as_count(name, v)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown grid parameter {other:?}; expected one of learning_rate, weight_decay, \
                     penalty_weight, rounds, batch_per_domain, d_feat, d_mlp, embed_dim, \
                     proto_learning_rate, proto_rounds"
                )))
            }
        }
    }
    c.validate()?;
    Ok(c)
}
