use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{compute_prototype, DomainPrototype};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, MlpParams};

/// How a domain is summarized before being appended to each input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingVariant {
    /// Mean of the prototypical network's embeddings.
    Prototype,
    /// Mean of the plain ERM model's features.
    MeanFeature,
    /// Mean penultimate activation of a domain-ID softmax classifier.
    SoftmaxHead,
    /// Prototype-trained model fed another domain's prototype at test time.
    RandomAtInference,
    /// No domain information; the classifier sees inputs only.
    None,
}

impl EmbeddingVariant {
    pub const ALL: [EmbeddingVariant; 5] = [
        EmbeddingVariant::None,
        EmbeddingVariant::RandomAtInference,
        EmbeddingVariant::MeanFeature,
        EmbeddingVariant::SoftmaxHead,
        EmbeddingVariant::Prototype,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingVariant::Prototype => "prototype",
            EmbeddingVariant::MeanFeature => "mean_feature",
            EmbeddingVariant::SoftmaxHead => "softmax_head",
            EmbeddingVariant::RandomAtInference => "random_at_inference",
            EmbeddingVariant::None => "none",
        }
    }
}

impl fmt::Display for EmbeddingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbeddingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EmbeddingVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown embedding variant {s:?}; expected one of {}",
                    EmbeddingVariant::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

/// Trained networks and donors a variant may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct VariantContext<'a> {
    pub proto_net: Option<&'a MlpParams>,
    pub erm_extractor: Option<&'a MlpParams>,
    pub softmax_trunk: Option<&'a MlpParams>,
    pub donor: Option<&'a DomainPrototype>,
    /// Length of the zero vector produced by [`EmbeddingVariant::None`].
    pub embed_dim: usize,
}

fn need<'a, T>(v: Option<&'a T>, what: &str, variant: EmbeddingVariant) -> Result<&'a T> {
    v.ok_or_else(|| Error::Config(format!("{variant} embedding requires {what}")))
}

/// Build one domain's embedding according to `variant`.
pub fn embed_variant(
    variant: EmbeddingVariant,
    ctx: &VariantContext<'_>,
    points: &Matrix,
    domain_id: &str,
) -> Result<DomainPrototype> {
    match variant {
        EmbeddingVariant::Prototype => {
            compute_prototype(need(ctx.proto_net, "a prototypical network", variant)?, points, domain_id)
        }
        EmbeddingVariant::MeanFeature => compute_prototype(
            need(ctx.erm_extractor, "an ERM feature extractor", variant)?,
            points,
            domain_id,
        ),
        EmbeddingVariant::SoftmaxHead => compute_prototype(
            need(ctx.softmax_trunk, "a domain-classifier trunk", variant)?,
            points,
            domain_id,
        ),
        EmbeddingVariant::RandomAtInference => {
            Ok(need(ctx.donor, "a donor prototype", variant)?.clone())
        }
        EmbeddingVariant::None => Ok(DomainPrototype {
            domain_id: domain_id.to_string(),
            mu: vec![0.0; ctx.embed_dim],
            n_points: points.rows().max(1),
        }),
    }
}
