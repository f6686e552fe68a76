//! `{"d_D": 32, "prototypes": [{"domain_id": "...", "n_points": 60, "mu": [...]}]}`

use serde::{Deserialize, Serialize};

use super::DomainPrototype;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeRecord {
    pub domain_id: String,
    pub n_points: usize,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeArchive {
    #[serde(rename = "d_D")]
    pub embed_dim: usize,
    pub prototypes: Vec<PrototypeRecord>,
}

impl PrototypeArchive {
    pub fn new(embed_dim: usize, protos: &[DomainPrototype]) -> Result<Self> {
        let prototypes = protos
            .iter()
            .map(|p| {
                if p.dim() != embed_dim {
                    return Err(Error::shape(
                        "PrototypeArchive",
                        format!("prototype {} has dim {}, archive {embed_dim}", p.domain_id, p.dim()),
                    ));
                }
                Ok(PrototypeRecord {
                    domain_id: p.domain_id.clone(),
                    n_points: p.n_points,
                    mu: p.mu.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(PrototypeArchive {
            embed_dim,
            prototypes,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: PrototypeArchive = serde_json::from_str(text).map_err(|e| Error::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            detail: e.to_string(),
        })?;
        for p in &a.prototypes {
            if p.mu.len() != a.embed_dim {
                return Err(Error::Validation(format!(
                    "prototype {} has {} entries, archive declares d_D = {}",
                    p.domain_id,
                    p.mu.len(),
                    a.embed_dim
                )));
            }
            if p.n_points == 0 || p.mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("prototype {} is degenerate", p.domain_id)));
            }
        }
        Ok(a)
    }

    pub fn prototypes(&self) -> Vec<DomainPrototype> {
        self.prototypes
            .iter()
            .map(|r| DomainPrototype {
                domain_id: r.domain_id.clone(),
                mu: r.mu.clone(),
                n_points: r.n_points,
            })
            .collect()
    }
}
