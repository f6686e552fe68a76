//! JSON checkpoints for [`MlpParams`].
//!
//! ```json
//! {"layers": [{"rows": 4, "cols": 3, "w": [...], "b": [...]}],
//!  "activation": "relu", "output_activation": "identity"}
//! ```
//!
//! Floats are written in shortest round-trip form, so decoding reproduces
//! every finite weight bit for bit.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::mlp::{Activation, Layer, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpRecord {
    pub layers: Vec<LayerRecord>,
    pub activation: Activation,
    #[serde(default = "identity")]
    pub output_activation: Activation,
}

fn identity() -> Activation {
    Activation::Identity
}

impl From<&MlpParams> for MlpRecord {
    fn from(p: &MlpParams) -> Self {
        MlpRecord {
            layers: p
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    rows: l.weight.rows(),
                    cols: l.weight.cols(),
                    w: l.weight.data().to_vec(),
                    b: l.bias.data().to_vec(),
                })
                .collect(),
            activation: p.hidden_activation(),
            output_activation: p.output_activation(),
        }
    }
}

impl TryFrom<MlpRecord> for MlpParams {
    type Error = Error;

    fn try_from(rec: MlpRecord) -> Result<Self> {
        let layers = rec
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                if l.b.len() != l.cols {
                    return Err(Error::Validation(format!(
                        "layer {i}: bias has {} entries, expected {}",
                        l.b.len(),
                        l.cols
                    )));
                }
                if l.w.iter().chain(&l.b).any(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!("layer {i}: non-finite weight")));
                }
                let weight = Matrix::from_vec(l.rows, l.cols, l.w)
                    .map_err(|e| Error::Validation(format!("layer {i}: {e}")))?;
                Layer::new(weight, Matrix::row_vector(&l.b))
            })
            .collect::<Result<Vec<_>>>()?;
        MlpParams::new(layers, rec.activation, rec.output_activation)
    }
}

pub fn to_json(params: &MlpParams) -> String {
    serde_json::to_string(&MlpRecord::from(params)).expect("plain data serializes")
}

pub fn from_json(text: &str) -> Result<MlpParams> {
    let rec: MlpRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        detail: e.to_string(),
    })?;
    rec.try_into()
}
