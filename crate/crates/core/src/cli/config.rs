//! One JSON schema per subcommand. Every section is optional and falls
//! back to the desk defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adaptive::TrainConfig;
use crate::benchgen::{LtConfig, MotherParams};
use crate::error::{Error, Result};
use crate::evalharness::{Algorithm, DomainCountMode, ExperimentConfig, HyperGrid, ProtoSource};
use crate::protoembed::{EmbeddingVariant, ProtoConfig};

pub const CONFIG_FORMAT: &str = "domgen-config-v1";

/// Fields shared by every command schema. Command-line flags win.
pub trait RunHeader {
    fn format(&self) -> Option<&str>;
    fn seed(&self) -> Option<u64>;
    fn out(&self) -> Option<&Path>;
}

macro_rules! run_header {
    ($t:ty) => {
        impl RunHeader for $t {
            fn format(&self) -> Option<&str> {
                self.format.as_deref()
            }
            fn seed(&self) -> Option<u64> {
                self.seed
            }
            fn out(&self) -> Option<&Path> {
                self.out.as_deref()
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub format: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mother: MotherParams,
    pub benchmark: LtConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainProtoConfig {
    pub format: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Expected input dimension; checked against the dataset when set.
    pub input_dim: Option<usize>,
    pub proto: ProtoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub format: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub variant: EmbeddingVariant,
    /// Expected prototype dimension; checked against the embedder when set.
    #[serde(rename = "d_D")]
    pub embed_dim: Option<usize>,
    pub train: TrainConfig,
    /// Used only by variants whose embedder is trained in-process.
    pub proto: ProtoConfig,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        TrainCmdConfig {
            format: None,
            seed: None,
            out: None,
            variant: EmbeddingVariant::Prototype,
            embed_dim: None,
            train: TrainConfig::default(),
            proto: ProtoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCmdConfig {
    pub format: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub top_k: usize,
    pub proto_source: ProtoSource,
    /// Build held-out prototypes from at most this many pool points.
    pub n_p: Option<usize>,
}

impl Default for EvalCmdConfig {
    fn default() -> Self {
        EvalCmdConfig {
            format: None,
            seed: None,
            out: None,
            top_k: 5,
            proto_source: ProtoSource::Pool,
            n_p: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub format: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    /// Number of consecutive seeds starting at the run seed.
    pub seeds: usize,
    pub algorithms: Vec<Algorithm>,
    pub n_values: Vec<usize>,
    pub domain_count_mode: DomainCountMode,
    pub f_values: Vec<f64>,
    pub variants: Vec<EmbeddingVariant>,
    pub n_p_values: Vec<usize>,
    pub grid: HyperGrid,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            format: None,
            seed: None,
            out: None,
            experiment: ExperimentConfig::default(),
            seeds: 5,
            algorithms: vec![Algorithm::Erm, Algorithm::DaErm],
            n_values: vec![4, 8, 12],
            domain_count_mode: DomainCountMode::FixedPerDomain,
            f_values: vec![0.02, 0.2, 1.0],
            variants: EmbeddingVariant::ALL.to_vec(),
            n_p_values: vec![25, 50, 100, 200, 400],
            grid: HyperGrid::new(&[("learning_rate", &[0.02, 0.05])]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub format: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mother: MotherParams,
    pub benchmark: LtConfig,
    pub proto: ProtoConfig,
    /// Train the embedding net on a generated benchmark first; otherwise
    /// use a randomly initialized one.
    pub train_net: bool,
    pub n_grid: Vec<usize>,
    pub trials: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            format: None,
            seed: None,
            out: None,
            mother: MotherParams::default(),
            benchmark: LtConfig::default(),
            proto: ProtoConfig::default(),
            train_net: true,
            n_grid: vec![16, 64, 256, 1024, 4096],
            trials: 20,
        }
    }
}

run_header!(GenConfig);
run_header!(TrainProtoConfig);
run_header!(TrainCmdConfig);
run_header!(EvalCmdConfig);
run_header!(AblateConfig);
run_header!(ConsistencyConfig);

/// Parse a config file, or take the defaults when no path is given.
pub fn load_config<T: DeserializeOwned + Default + RunHeader>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: T = serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!("{}: {e}", path.display()))
    })?;
    if let Some(f) = cfg.format() {
        if f != CONFIG_FORMAT {
            return Err(Error::Config(format!(
                "{}: unsupported format {f:?}, expected {CONFIG_FORMAT:?}",
                path.display()
            )));
        }
    }
    Ok(cfg)
}
