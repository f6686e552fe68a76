//! Benchmark → embedder → prototypes → classifier → report.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{top_k_hits, DomainScore, EvalReport, SplitScore};
use crate::adaptive::{
    adaptive_logits, adaptive_train, build_augmented, AdaptiveModel, ModelCheckpoint, PenaltyKind,
    TrainConfig, TrainOutput,
};
use crate::benchgen::{subsample_fit, BenchmarkSplit, DomainDataset, LtConfig, MotherParams};
use crate::error::{Error, Result};
use crate::numcore::{derive_seed, tag, Matrix, MlpParams, SplitMix64};
use crate::protoembed::{
    compute_prototype, proto_train, softmax_head_train, DomainPrototype, EmbeddingVariant, ProtoConfig,
};

/// Where a held-out domain's prototype points come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtoSource {
    /// The domain's unlabeled pool (its `fit` records), falling back to
    /// the evaluation inputs when the pool is empty.
    #[default]
    Pool,
    /// The evaluation inputs themselves.
    Inputs,
}

/// Everything needed to regenerate a benchmark and train on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mother: MotherParams,
    pub benchmark: LtConfig,
    pub proto: ProtoConfig,
    pub train: TrainConfig,
    pub top_k: usize,
    pub proto_source: ProtoSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mother: MotherParams::default(),
            benchmark: LtConfig::default(),
            proto: ProtoConfig::default(),
            train: TrainConfig::default(),
            top_k: 5,
            proto_source: ProtoSource::Pool,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.proto.validate()?;
        self.train.validate()?;
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn eval_options(&self, seed: u64) -> EvalOptions {
        EvalOptions {
            top_k: self.top_k,
            proto_source: self.proto_source,
            n_p: None,
            seed,
        }
    }
}

/// Point every random stream of `cfg` at children of `seed`.
pub fn seeded(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.mother.rng_seed = derive_seed(seed, tag("mother"));
    c.proto.sgd.rng_seed = derive_seed(seed, tag("proto"));
    c.train.sgd.rng_seed = derive_seed(seed, tag("train"));
    c
}

fn train_inputs(bench: &BenchmarkSplit) -> Vec<Matrix> {
    bench.train.iter().map(|d| d.fit_inputs(bench.dim)).collect()
}

/// Lazily trained embedding networks shared by several systems built on
/// the same benchmark and configuration.
#[derive(Debug, Default)]
pub struct Embedders {
    proto: Option<MlpParams>,
    erm: Option<AdaptiveModel>,
    softmax: Option<MlpParams>,
}

impl Embedders {
    /// Start from an already trained prototypical network.
    pub fn with_proto_net(net: MlpParams) -> Self {
        Embedders {
            proto: Some(net),
            ..Embedders::default()
        }
    }

    pub fn proto_net(&mut self, bench: &BenchmarkSplit, cfg: &ExperimentConfig) -> Result<&MlpParams> {
        if self.proto.is_none() {
            self.proto = Some(proto_train(&train_inputs(bench), &cfg.proto)?.net);
        }
        Ok(self.proto.as_ref().expect("set"))
    }

    pub fn erm(&mut self, bench: &BenchmarkSplit, cfg: &ExperimentConfig) -> Result<&AdaptiveModel> {
        if self.erm.is_none() {
            let mut train = cfg.train.clone();
            train.penalty = PenaltyKind::None;
            self.erm = Some(fit_classifier(bench, &train, None)?.model);
        }
        Ok(self.erm.as_ref().expect("set"))
    }

    pub fn softmax_trunk(&mut self, bench: &BenchmarkSplit, cfg: &ExperimentConfig) -> Result<&MlpParams> {
        if self.softmax.is_none() {
            self.softmax = Some(softmax_head_train(&train_inputs(bench), &cfg.proto)?.net);
        }
        Ok(self.softmax.as_ref().expect("set"))
    }
}

/// Train a classifier on the training domains augmented with prototypes
/// from `embedder` (none for a prototype-free model).
pub fn fit_classifier(bench: &BenchmarkSplit, train: &TrainConfig, embedder: Option<&MlpParams>) -> Result<TrainOutput> {
    let protos = bench
        .train
        .iter()
        .map(|d| domain_prototype(embedder, &d.fit_inputs(bench.dim), &d.domain_id))
        .collect::<Result<Vec<_>>>()?;
    let data = build_augmented(&bench.train, &protos)?;
    adaptive_train(&data, bench.classes, train)
}

fn domain_prototype(embedder: Option<&MlpParams>, points: &Matrix, id: &str) -> Result<DomainPrototype> {
    match embedder {
        Some(net) => compute_prototype(net, points, id),
        None => Ok(DomainPrototype {
            domain_id: id.to_string(),
            mu: Vec::new(),
            n_points: points.rows().max(1),
        }),
    }
}

/// A classifier together with the network that embeds new domains.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSystem {
    pub model: AdaptiveModel,
    /// `None` for a prototype-free model.
    pub embedder: Option<MlpParams>,
    pub variant: EmbeddingVariant,
}

impl TrainedSystem {
    pub fn from_checkpoint(ck: ModelCheckpoint) -> Result<Self> {
        let variant = ck.variant.unwrap_or(if ck.embedder.is_some() {
            EmbeddingVariant::Prototype
        } else {
            EmbeddingVariant::None
        });
        let sys = TrainedSystem {
            model: ck.model,
            embedder: ck.embedder,
            variant,
        };
        if sys.embedder.is_none() && sys.model.embed_dim > 0 {
            return Err(Error::Validation(format!(
                "model expects {}-dim prototypes but carries no embedder",
                sys.model.embed_dim
            )));
        }
        Ok(sys)
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            model: self.model.clone(),
            embedder: self.embedder.clone(),
            variant: Some(self.variant),
        }
    }
}

/// Train the classifier for one embedding variant. `Prototype` and
/// `RandomAtInference` share a model; they differ only at evaluation.
pub fn train_system(
    bench: &BenchmarkSplit,
    cfg: &ExperimentConfig,
    variant: EmbeddingVariant,
    penalty: PenaltyKind,
    embedders: &mut Embedders,
) -> Result<TrainedSystem> {
    let mut train = cfg.train.clone();
    train.penalty = penalty;
    let embedder = match variant {
        EmbeddingVariant::None => None,
        EmbeddingVariant::Prototype | EmbeddingVariant::RandomAtInference => {
            Some(embedders.proto_net(bench, cfg)?.clone())
        }
        EmbeddingVariant::MeanFeature => Some(embedders.erm(bench, cfg)?.f_ft.clone()),
        EmbeddingVariant::SoftmaxHead => Some(embedders.softmax_trunk(bench, cfg)?.clone()),
    };
    let model = if embedder.is_none() && penalty == PenaltyKind::None {
        embedders.erm(bench, cfg)?.clone()
    } else {
        fit_classifier(bench, &train, embedder.as_ref())?.model
    };
    Ok(TrainedSystem {
        model,
        embedder,
        variant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub top_k: usize,
    pub proto_source: ProtoSource,
    /// Build held-out prototypes from at most this many pool points.
    pub n_p: Option<usize>,
    /// Drives pool subsampling and prototype shuffling.
    pub seed: u64,
}

/// A derangement of `0..n`: `out[i] != i` for every `i`.
pub fn derange(n: usize, rng: &mut SplitMix64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Config(format!(
            "shuffling prototypes needs at least 2 domains, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut out = vec![0; n];
    for i in 0..n {
        out[perm[i]] = perm[(i + 1) % n];
    }
    Ok(out)
}

fn prototype_points(d: &DomainDataset, dim: usize, opts: &EvalOptions) -> Matrix {
    match opts.proto_source {
        ProtoSource::Pool if !d.fit.is_empty() => match opts.n_p {
            Some(n) => subsample_fit(d, n, derive_seed(opts.seed, tag(&d.domain_id))).fit_inputs(dim),
            None => d.fit_inputs(dim),
        },
        _ => d.eval_inputs(dim),
    }
}

/// Prototypes for held-out domains as the system would see them at test
/// time (shuffled across domains for `RandomAtInference`).
pub fn prototypes_for(
    sys: &TrainedSystem,
    domains: &[DomainDataset],
    dim: usize,
    opts: &EvalOptions,
) -> Result<Vec<DomainPrototype>> {
    let own = domains
        .iter()
        .map(|d| domain_prototype(sys.embedder.as_ref(), &prototype_points(d, dim, opts), &d.domain_id))
        .collect::<Result<Vec<_>>>()?;
    if sys.variant != EmbeddingVariant::RandomAtInference || own.is_empty() {
        return Ok(own);
    }
    let mut rng = SplitMix64::new(derive_seed(opts.seed, tag("derange")));
    let donor = derange(own.len(), &mut rng)?;
    Ok(donor.iter().map(|&j| own[j].clone()).collect())
}

fn score_domains(
    sys: &TrainedSystem,
    split: &str,
    domains: &[DomainDataset],
    protos: &[DomainPrototype],
    dim: usize,
    k: usize,
    rows: &mut Vec<DomainScore>,
) -> Result<Option<SplitScore>> {
    let (mut h1, mut hk, mut total) = (0usize, 0usize, 0usize);
    for (d, p) in domains.iter().zip(protos) {
        if d.eval.is_empty() {
            continue;
        }
        let logits = adaptive_logits(&sys.model, p, &d.eval_inputs(dim))?;
        let labels = d.eval_labels();
        let (a, n) = top_k_hits(&logits, &labels, 1)?;
        let (b, _) = top_k_hits(&logits, &labels, k)?;
        rows.push(DomainScore {
            domain_id: d.domain_id.clone(),
            split: split.to_string(),
            n,
            top1: a as f64 / n as f64,
            topk: b as f64 / n as f64,
        });
        h1 += a;
        hk += b;
        total += n;
    }
    Ok((total > 0).then(|| SplitScore {
        n: total,
        top1: h1 as f64 / total as f64,
        topk: hk as f64 / total as f64,
    }))
}

/// Score every labeled evaluation set. Training domains use prototypes
/// from all their fit points, as in training.
pub fn evaluate(sys: &TrainedSystem, bench: &BenchmarkSplit, opts: &EvalOptions) -> Result<EvalReport> {
    if opts.top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    let dim = bench.dim;
    if sys.model.input_dim() != dim {
        return Err(Error::Validation(format!(
            "model takes {}-dim inputs, dataset has {dim}",
            sys.model.input_dim()
        )));
    }
    if sys.model.num_classes != bench.classes {
        return Err(Error::Validation(format!(
            "model predicts {} classes, dataset has {}",
            sys.model.num_classes, bench.classes
        )));
    }
    let train_protos = bench
        .train
        .iter()
        .map(|d| domain_prototype(sys.embedder.as_ref(), &d.fit_inputs(dim), &d.domain_id))
        .collect::<Result<Vec<_>>>()?;
    let val_protos = prototypes_for(sys, &bench.val, dim, opts)?;
    let test_protos = prototypes_for(sys, &bench.test, dim, opts)?;

    let mut per_domain = Vec::new();
    let train = score_domains(sys, "train", &bench.train, &train_protos, dim, opts.top_k, &mut per_domain)?;
    let val = score_domains(sys, "val", &bench.val, &val_protos, dim, opts.top_k, &mut per_domain)?;
    let test = score_domains(sys, "test", &bench.test, &test_protos, dim, opts.top_k, &mut per_domain)?;
    Ok(EvalReport {
        k: opts.top_k,
        seed: opts.seed,
        per_domain,
        train,
        val,
        test,
        config: serde_json::Value::Null,
    })
}
