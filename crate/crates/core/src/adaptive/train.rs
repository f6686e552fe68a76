use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::penalty::{penalty, Bandwidth, PenaltyKind};
use super::{broadcast_mu, AdaptiveModel, AugmentedDataset, ModelGradients};
use crate::error::{Error, Result};
use crate::numcore::{cross_entropy_loss, derive_seed, sgd_step_in_place, Matrix, SgdConfig, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    #[serde(default = "default_batch")]
    pub batch_per_domain: usize,
    pub sgd: SgdConfig,
    #[serde(default)]
    pub penalty: PenaltyKind,
    /// γ, the weight on the penalty term.
    #[serde(default = "default_gamma")]
    pub penalty_weight: f64,
    #[serde(default)]
    pub mmd_bandwidth: Bandwidth,
    #[serde(default = "default_width")]
    pub d_feat: usize,
    #[serde(default = "default_width")]
    pub d_mlp: usize,
    /// Hidden widths of `F_ft` before its `d_feat` output.
    #[serde(default)]
    pub ft_hidden: Vec<usize>,
}

fn default_batch() -> usize {
    16
}

fn default_gamma() -> f64 {
    1.0
}

fn default_width() -> usize {
    64
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 1500,
            batch_per_domain: default_batch(),
            sgd: SgdConfig {
                learning_rate: 0.05,
                weight_decay: 1e-5,
                rng_seed: 0,
            },
            penalty: PenaltyKind::None,
            penalty_weight: default_gamma(),
            mmd_bandwidth: Bandwidth::Median,
            d_feat: default_width(),
            d_mlp: default_width(),
            ft_hidden: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.batch_per_domain == 0 {
            return Err(Error::Config("batch_per_domain must be at least 1".into()));
        }
        if !(self.penalty_weight.is_finite() && self.penalty_weight >= 0.0) {
            return Err(Error::Config(format!(
                "penalty_weight must be non-negative, got {}",
                self.penalty_weight
            )));
        }
        if self.d_feat == 0 || self.d_mlp == 0 || self.ft_hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn penalty_active(&self) -> bool {
        self.penalty != PenaltyKind::None && self.penalty_weight > 0.0
    }
}

/// One domain's share of a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch {
    pub x: Matrix,
    /// One prototype row per input row.
    pub mu: Matrix,
    pub y: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    /// γ times the raw penalty.
    pub penalty: f64,
}

/// Mean cross-entropy over all rows plus `γ·penalty` on the hidden layer
/// of `F_mlp`, with gradients for both parameter blocks.
pub fn adaptive_loss(
    model: &AdaptiveModel,
    batches: &[DomainBatch],
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, ModelGradients)> {
    let xs: Vec<&Matrix> = batches.iter().map(|b| &b.x).collect();
    let mus: Vec<&Matrix> = batches.iter().map(|b| &b.mu).collect();
    let x = Matrix::vstack(&xs)?;
    let mu = Matrix::vstack(&mus)?;
    let y: Vec<usize> = batches.iter().flat_map(|b| b.y.iter().copied()).collect();

    let (logits, cache) = model.forward_cached(&x, &mu)?;
    let (ce, dlogits) = cross_entropy_loss(&logits, &y)?;

    let (pen, dhidden) = if cfg.penalty_active() {
        let hidden = cache.hidden();
        let mut start = 0;
        let parts: Vec<Matrix> = batches
            .iter()
            .map(|b| {
                let part = hidden.row_block(start, start + b.y.len());
                start += b.y.len();
                part
            })
            .collect();
        let (v, grads) = penalty(cfg.penalty, &parts, cfg.mmd_bandwidth)?;
        let refs: Vec<&Matrix> = grads.iter().collect();
        let mut g = Matrix::vstack(&refs)?;
        g.scale(cfg.penalty_weight);
        (cfg.penalty_weight * v, Some(g))
    } else {
        (0.0, None)
    };

    let grads = model.backward(&cache, &dlogits, dhidden.as_ref())?;
    Ok((
        LossBreakdown {
            total: ce + pen,
            ce,
            penalty: pen,
        },
        grads,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: AdaptiveModel,
    /// Loss of the batch seen in each round, before that round's step.
    pub log: Vec<LossBreakdown>,
}

/// `cfg.rounds` steps, each on one random sub-batch from every domain.
pub fn adaptive_train(data: &AugmentedDataset, num_classes: usize, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.domains.is_empty() || data.domains.iter().any(|d| d.y.is_empty()) {
        return Err(Error::Config("training needs at least one non-empty domain".into()));
    }
    if cfg.penalty_active() {
        if data.domains.len() < 2 {
            return Err(Error::Config(format!(
                "{:?} penalty needs at least 2 training domains",
                cfg.penalty
            )));
        }
        if cfg.penalty == PenaltyKind::Coral
            && (cfg.batch_per_domain < 2 || data.domains.iter().any(|d| d.y.len() < 2))
        {
            return Err(Error::Config(
                "CORAL needs at least 2 points per domain batch".into(),
            ));
        }
    }
    let seed = cfg.sgd.rng_seed;
    let mut init_rng = SplitMix64::new(derive_seed(seed, 0));
    let mut model = AdaptiveModel::init(data.input_dim(), data.embed_dim(), num_classes, cfg, &mut init_rng)?;
    let mut rng = SplitMix64::new(derive_seed(seed, 1));
    let mut log = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let batches: Vec<DomainBatch> = data
            .domains
            .iter()
            .map(|d| {
                let n = d.y.len();
                let idx = index::sample(&mut rng, n, cfg.batch_per_domain.min(n)).into_vec();
                DomainBatch {
                    x: d.x.select_rows(&idx),
                    mu: broadcast_mu(&d.mu, idx.len()),
                    y: idx.iter().map(|&i| d.y[i]).collect(),
                }
            })
            .collect();
        let (loss, grads) = adaptive_loss(&model, &batches, cfg)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at round {round}")));
        }
        sgd_step_in_place(&mut model.f_ft, &grads.f_ft, &cfg.sgd)
            .and_then(|_| sgd_step_in_place(&mut model.f_mlp, &grads.f_mlp, &cfg.sgd))
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("round {round}: {m}")),
                other => other,
            })?;
        log.push(loss);
    }
    Ok(TrainOutput { model, log })
}
