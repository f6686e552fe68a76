//! `{"format": "domgen-model-v1", "d_D": 32, "classes": 20, "f_ft": {...}, "f_mlp": {...}}`
//!
//! Optional `embedder` (the network that produces prototypes for new
//! domains) and `variant` fields let evaluation run from the checkpoint
//! and a dataset alone.

use serde::{Deserialize, Serialize};

use super::AdaptiveModel;
use crate::error::{Error, Result};
use crate::numcore::checkpoint::MlpRecord;
use crate::numcore::MlpParams;
use crate::protoembed::EmbeddingVariant;

pub const MODEL_FORMAT: &str = "domgen-model-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    format: String,
    #[serde(rename = "d_D")]
    embed_dim: usize,
    classes: usize,
    f_ft: MlpRecord,
    f_mlp: MlpRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedder: Option<MlpRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<EmbeddingVariant>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: AdaptiveModel,
    pub embedder: Option<MlpParams>,
    pub variant: Option<EmbeddingVariant>,
}

impl ModelCheckpoint {
    pub fn to_json(&self) -> String {
        let rec = Record {
            format: MODEL_FORMAT.to_string(),
            embed_dim: self.model.embed_dim,
            classes: self.model.num_classes,
            f_ft: (&self.model.f_ft).into(),
            f_mlp: (&self.model.f_mlp).into(),
            embedder: self.embedder.as_ref().map(Into::into),
            variant: self.variant,
        };
        serde_json::to_string(&rec).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: Record = serde_json::from_str(text).map_err(|e| Error::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            detail: e.to_string(),
        })?;
        if rec.format != MODEL_FORMAT {
            return Err(Error::Validation(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                rec.format
            )));
        }
        let model = AdaptiveModel::new(rec.f_ft.try_into()?, rec.f_mlp.try_into()?, rec.embed_dim)?;
        if model.num_classes != rec.classes {
            return Err(Error::Validation(format!(
                "header says {} classes, F_mlp emits {}",
                rec.classes, model.num_classes
            )));
        }
        let embedder: Option<MlpParams> = rec.embedder.map(TryInto::try_into).transpose()?;
        if let Some(e) = &embedder {
            if e.out_dim() != rec.embed_dim || e.in_dim() != model.input_dim() {
                return Err(Error::Validation(format!(
                    "embedder maps {} → {}, model needs {} → {}",
                    e.in_dim(),
                    e.out_dim(),
                    model.input_dim(),
                    rec.embed_dim
                )));
            }
        }
        Ok(ModelCheckpoint {
            model,
            embedder,
            variant: rec.variant,
        })
    }
}
