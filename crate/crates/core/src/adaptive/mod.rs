//! Classifier over inputs augmented with their domain's prototype.
//!
//! `F(x, μ) = F_mlp([F_ft(x) ∥ μ])`. A model built with `embed_dim = 0`
//! never sees a prototype and is the plain pooled (ERM) baseline.

mod checkpoint;
mod penalty;
mod train;

use rand::Rng;

use crate::benchgen::DomainDataset;
use crate::error::{Error, Result};
use crate::numcore::{Activation, ForwardCache, Gradients, Matrix, MlpParams};
use crate::protoembed::DomainPrototype;

pub use checkpoint::{ModelCheckpoint, MODEL_FORMAT};
pub use penalty::{coral_penalty, mmd_penalty, penalty, Bandwidth, PenaltyKind};
pub use train::{adaptive_loss, adaptive_train, DomainBatch, LossBreakdown, TrainConfig, TrainOutput};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub y: usize,
}

/// Augmented samples kept grouped by domain, since training draws one
/// sub-batch per domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDomain {
    pub domain_id: String,
    pub x: Matrix,
    pub mu: Vec<f64>,
    pub y: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub domains: Vec<AugmentedDomain>,
}

impl AugmentedDataset {
    pub fn len(&self) -> usize {
        self.domains.iter().map(|d| d.y.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.domains.first().map_or(0, |d| d.x.cols())
    }

    pub fn embed_dim(&self) -> usize {
        self.domains.first().map_or(0, |d| d.mu.len())
    }

    pub fn samples(&self) -> impl Iterator<Item = AugmentedSample> + '_ {
        self.domains.iter().flat_map(|d| {
            d.x.iter_rows().zip(&d.y).map(|(x, &y)| AugmentedSample {
                x: x.to_vec(),
                mu: d.mu.clone(),
                y,
            })
        })
    }
}

/// Pair every fit sample with its own domain's prototype.
pub fn build_augmented(
    domains: &[DomainDataset],
    prototypes: &[DomainPrototype],
) -> Result<AugmentedDataset> {
    let mut out = Vec::with_capacity(domains.len());
    for d in domains {
        let proto = prototypes
            .iter()
            .find(|p| p.domain_id == d.domain_id)
            .ok_or_else(|| Error::Config(format!("no prototype for domain {}", d.domain_id)))?;
        let dim = d.dim().unwrap_or(0);
        out.push(AugmentedDomain {
            domain_id: d.domain_id.clone(),
            x: d.fit_inputs(dim),
            mu: proto.mu.clone(),
            y: d.fit_labels(),
        });
    }
    let ds = AugmentedDataset { domains: out };
    if let Some(first) = ds.domains.first() {
        for d in &ds.domains {
            if d.x.cols() != first.x.cols() || d.mu.len() != first.mu.len() {
                return Err(Error::shape(
                    "build_augmented",
                    format!("domain {} disagrees with {} on dimensions", d.domain_id, first.domain_id),
                ));
            }
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveModel {
    pub f_ft: MlpParams,
    pub f_mlp: MlpParams,
    pub embed_dim: usize,
    pub num_classes: usize,
}

/// Intermediate values of one forward pass, needed for gradients.
pub struct AdaptiveCache {
    pub(crate) ft: ForwardCache,
    pub(crate) mlp: ForwardCache,
}

impl AdaptiveCache {
    /// Post-ReLU hidden layer of `F_mlp`.
    pub fn hidden(&self) -> &Matrix {
        self.mlp.activation(0).expect("F_mlp has a hidden layer")
    }
}

/// Gradients for both parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub f_ft: Gradients,
    pub f_mlp: Gradients,
}

impl ModelGradients {
    pub fn num_params(&self) -> usize {
        self.f_ft.num_params() + self.f_mlp.num_params()
    }

    /// Flat index over `f_ft` then `f_mlp`.
    pub fn get(&self, idx: usize) -> f64 {
        let n = self.f_ft.num_params();
        if idx < n {
            self.f_ft.get(idx)
        } else {
            self.f_mlp.get(idx - n)
        }
    }
}

impl AdaptiveModel {
    /// `f_ft`: `input_dim → ft_hidden… → d_feat`, ReLU throughout.
    /// `f_mlp`: `d_feat + embed_dim → d_mlp → classes`.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        embed_dim: usize,
        num_classes: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 || cfg.d_feat == 0 || cfg.d_mlp == 0 {
            return Err(Error::Config(
                "input_dim, classes, d_feat and d_mlp must all be positive".into(),
            ));
        }
        let mut ft_dims = vec![input_dim];
        ft_dims.extend(&cfg.ft_hidden);
        ft_dims.push(cfg.d_feat);
        let f_ft = MlpParams::init(&ft_dims, Activation::Relu, Activation::Relu, rng)?;
        let f_mlp = MlpParams::init(
            &[cfg.d_feat + embed_dim, cfg.d_mlp, num_classes],
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        AdaptiveModel::new(f_ft, f_mlp, embed_dim)
    }

    pub fn new(f_ft: MlpParams, f_mlp: MlpParams, embed_dim: usize) -> Result<Self> {
        if f_ft.out_dim() + embed_dim != f_mlp.in_dim() {
            return Err(Error::shape(
                "AdaptiveModel",
                format!(
                    "F_ft emits {} features, d_D = {embed_dim}, F_mlp expects {}",
                    f_ft.out_dim(),
                    f_mlp.in_dim()
                ),
            ));
        }
        if f_mlp.layers().len() < 2 {
            return Err(Error::shape("AdaptiveModel", "F_mlp needs a hidden layer"));
        }
        let num_classes = f_mlp.out_dim();
        Ok(AdaptiveModel {
            f_ft,
            f_mlp,
            embed_dim,
            num_classes,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.f_ft.in_dim()
    }

    pub fn num_params(&self) -> usize {
        self.f_ft.num_params() + self.f_mlp.num_params()
    }

    pub fn param(&self, idx: usize) -> f64 {
        let n = self.f_ft.num_params();
        if idx < n {
            self.f_ft.param(idx)
        } else {
            self.f_mlp.param(idx - n)
        }
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        let n = self.f_ft.num_params();
        if idx < n {
            self.f_ft.set_param(idx, v)
        } else {
            self.f_mlp.set_param(idx - n, v)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.f_ft.is_finite() && self.f_mlp.is_finite()
    }

    pub(crate) fn forward_cached(&self, x: &Matrix, mu: &Matrix) -> Result<(Matrix, AdaptiveCache)> {
        if mu.rows() != x.rows() {
            return Err(Error::shape(
                "adaptive_forward",
                format!("{} inputs but {} prototype rows", x.rows(), mu.rows()),
            ));
        }
        if mu.cols() != self.embed_dim {
            return Err(Error::shape(
                "adaptive_forward",
                format!("prototype dim {}, model expects {}", mu.cols(), self.embed_dim),
            ));
        }
        let (feat, ft) = self.f_ft.forward(x)?;
        let joined = feat.hcat(mu)?;
        let (logits, mlp) = self.f_mlp.forward(&joined)?;
        Ok((logits, AdaptiveCache { ft, mlp }))
    }

    /// Gradients of a loss given `d loss / d logits` and, optionally, an
    /// extra upstream gradient on the hidden layer of `F_mlp`.
    pub(crate) fn backward(
        &self,
        cache: &AdaptiveCache,
        dlogits: &Matrix,
        dhidden: Option<&Matrix>,
    ) -> Result<ModelGradients> {
        let taps: Vec<(usize, &Matrix)> = dhidden.into_iter().map(|g| (0, g)).collect();
        let (g_mlp, djoined) = self.f_mlp.backward_with_taps(&cache.mlp, dlogits, &taps)?;
        let (dfeat, _) = djoined.hsplit(self.f_ft.out_dim())?;
        let (g_ft, _) = self.f_ft.backward(&cache.ft, &dfeat)?;
        Ok(ModelGradients {
            f_ft: g_ft,
            f_mlp: g_mlp,
        })
    }
}

/// `F_mlp([F_ft(x) ∥ μ])`, one row of `mu_batch` per input row.
pub fn adaptive_forward(model: &AdaptiveModel, x_batch: &Matrix, mu_batch: &Matrix) -> Result<Matrix> {
    Ok(model.forward_cached(x_batch, mu_batch)?.0)
}

/// Repeat `mu` once per row.
pub fn broadcast_mu(mu: &[f64], rows: usize) -> Matrix {
    let mut data = Vec::with_capacity(rows * mu.len());
    for _ in 0..rows {
        data.extend_from_slice(mu);
    }
    Matrix::from_vec(rows, mu.len(), data).expect("sized")
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Logits for `x_batch` with one domain's prototype. A model without a
/// prototype input ignores `prototype`.
pub fn adaptive_logits(model: &AdaptiveModel, prototype: &DomainPrototype, x_batch: &Matrix) -> Result<Matrix> {
    let mu: &[f64] = if model.embed_dim == 0 { &[] } else { &prototype.mu };
    if mu.len() != model.embed_dim {
        return Err(Error::shape(
            "adaptive_infer",
            format!(
                "prototype {} has dim {}, model expects {}",
                prototype.domain_id,
                prototype.dim(),
                model.embed_dim
            ),
        ));
    }
    adaptive_forward(model, x_batch, &broadcast_mu(mu, x_batch.rows()))
}

/// Predicted class per row of `x_batch`.
pub fn adaptive_infer(model: &AdaptiveModel, prototype: &DomainPrototype, x_batch: &Matrix) -> Result<Vec<usize>> {
    let logits = adaptive_logits(model, prototype, x_batch)?;
    Ok(logits.iter_rows().map(argmax).collect())
}
