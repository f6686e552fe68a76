use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;

use super::config::{
    load_config, AblateConfig, ConsistencyConfig, EvalCmdConfig, GenConfig, RunHeader, TrainCmdConfig,
    TrainProtoConfig, CONFIG_FORMAT,
};
use super::{AblateKind, CommonArgs, MANIFEST_FORMAT};
use crate::adaptive::{ModelCheckpoint, PenaltyKind};
use crate::benchgen::{generate_lt_benchmark, load_external_dataset, write_dataset_file, BenchmarkSplit, MotherSpec};
use crate::error::{Error, Result};
use crate::evalharness::{
    ablation_domain_count, ablation_embedding_variant, ablation_prototype_count, ablation_tail_index,
    adaptivity_gap, aggregate, config_hash, consistency_experiment, evaluate, fit_classifier, lodo_select,
    run_parallel, seeds_from, write_rows_csv, EvalOptions, ProtoSource, SweepRow, TrainedSystem,
};
use crate::numcore::{checkpoint, derive_seed, tag, Matrix, MlpParams, SplitMix64};
use crate::protoembed::{
    compute_prototype, init_embedding_net, proto_train, softmax_head_train, EmbeddingVariant, PrototypeArchive,
};

/// Resolved run settings shared by all commands.
struct Run {
    command: &'static str,
    out: PathBuf,
    seed: u64,
    jobs: usize,
    timestamp: bool,
    hash: String,
    inputs: BTreeMap<String, String>,
    written: Vec<PathBuf>,
}

impl Run {
    /// Resolve flags against the config header and stamp the config with
    /// the outcome so the manifest can replay it.
    fn start<C>(command: &'static str, args: &CommonArgs, cfg: &mut C, inputs: &[(&str, &Path)]) -> Result<Self>
    where
        C: RunHeader + Serialize + HeaderMut,
    {
        if args.jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        let seed = args.seed.or(cfg.seed()).unwrap_or(0);
        let out = args
            .out
            .clone()
            .or_else(|| cfg.out().map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."));
        cfg.set_header(seed, None);
        cfg.seed_streams(seed);
        let mut input_map: BTreeMap<String, String> = inputs
            .iter()
            .map(|(k, p)| (k.to_string(), p.display().to_string()))
            .collect();
        let hash = config_hash(&json!({ "command": command, "config": &*cfg, "inputs": &input_map }));
        cfg.set_header(seed, Some(out.clone()));
        if let Some(c) = &args.config {
            input_map.insert("config".into(), c.display().to_string());
        }
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Run {
            command,
            out,
            seed,
            jobs: args.jobs,
            timestamp: !args.no_timestamp,
            hash,
            inputs: input_map,
            written: Vec::new(),
        })
    }

    fn artifact(&self, stem: &str, ext: &str) -> PathBuf {
        self.out.join(format!("{stem}-{}-s{}.{ext}", self.hash, self.seed))
    }

    fn write(&mut self, path: PathBuf, contents: &str) -> Result<()> {
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
        text.push('\n');
        self.write(path, &text)
    }

    fn finish<C: Serialize>(mut self, cfg: &C) -> Result<Vec<PathBuf>> {
        let created_unix = self
            .timestamp
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
        let mut manifest = json!({
            "format": MANIFEST_FORMAT,
            "command": self.command,
            "seed": self.seed,
            "config": cfg,
            "inputs": &self.inputs,
            "outputs": self.written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        if let Some(t) = created_unix {
            manifest["created_unix"] = json!(t);
        }
        let path = self.out.join(format!("manifest-{}.json", self.command));
        self.write_json(path, &manifest)?;
        Ok(self.written)
    }
}

/// Lets [`Run::start`] stamp seed, output directory and format, and point
/// every random stream of the config at a child of the run seed.
trait HeaderMut {
    fn set_header(&mut self, seed: u64, out: Option<PathBuf>);
    fn seed_streams(&mut self, _seed: u64) {}
}

macro_rules! header_mut {
    ($($t:ty),*) => {$(
        impl HeaderMut for $t {
            fn set_header(&mut self, seed: u64, out: Option<PathBuf>) {
                self.format = Some(CONFIG_FORMAT.to_string());
                self.seed = Some(seed);
                self.out = out;
            }
        }
    )*};
}

macro_rules! streams {
    ($t:ty, |$c:ident, $s:ident| $body:block) => {
        impl HeaderMut for $t {
            fn set_header(&mut self, seed: u64, out: Option<PathBuf>) {
                self.format = Some(CONFIG_FORMAT.to_string());
                self.seed = Some(seed);
                self.out = out;
            }
            fn seed_streams(&mut self, $s: u64) {
                let $c = self;
                $body
            }
        }
    };
}

header_mut!(EvalCmdConfig, AblateConfig);
streams!(GenConfig, |c, seed| { c.mother.rng_seed = derive_seed(seed, tag("mother")); });
streams!(TrainProtoConfig, |c, seed| { c.proto.sgd.rng_seed = derive_seed(seed, tag("proto")); });
streams!(TrainCmdConfig, |c, seed| {
    c.train.sgd.rng_seed = derive_seed(seed, tag("train"));
    c.proto.sgd.rng_seed = derive_seed(seed, tag("proto"));
});
streams!(ConsistencyConfig, |c, seed| {
    c.mother.rng_seed = derive_seed(seed, tag("mother"));
    c.proto.sgd.rng_seed = derive_seed(seed, tag("proto"));
});

fn train_inputs(bench: &BenchmarkSplit) -> Vec<Matrix> {
    bench.train.iter().map(|d| d.fit_inputs(bench.dim)).collect()
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_embedder(path: &Path) -> Result<MlpParams> {
    checkpoint::from_json(&read_text(path)?)
}

pub(super) fn gen(args: &CommonArgs) -> Result<Vec<PathBuf>> {
    let mut cfg: GenConfig = load_config(args.config.as_deref())?;
    let mut run = Run::start("gen", args, &mut cfg, &[])?;
    let spec = MotherSpec::generate(&cfg.mother)?;
    let bench = generate_lt_benchmark(&spec, &cfg.benchmark)?;
    let path = run.artifact("data", "jsonl");
    write_dataset_file(&bench, &path)?;
    run.written.push(path);
    run.finish(&cfg)
}

pub(super) fn train_proto(args: &CommonArgs, data: &Path) -> Result<Vec<PathBuf>> {
    let mut cfg: TrainProtoConfig = load_config(args.config.as_deref())?;
    let mut run = Run::start("train-proto", args, &mut cfg, &[("data", data)])?;
    cfg.proto.validate()?;
    let bench = load_external_dataset(data)?;
    if let Some(d) = cfg.input_dim {
        if d != bench.dim {
            return Err(Error::Config(format!(
                "config expects {d}-dim inputs, dataset has {}",
                bench.dim
            )));
        }
    }
    let trained = proto_train(&train_inputs(&bench), &cfg.proto)?;
    let protos = bench
        .train
        .iter()
        .map(|d| compute_prototype(&trained.net, &d.fit_inputs(bench.dim), &d.domain_id))
        .collect::<Result<Vec<_>>>()?;
    let archive = PrototypeArchive::new(cfg.proto.embed_dim, &protos)?;

    let mut log = String::from("round,loss\n");
    for (i, l) in trained.losses.iter().enumerate() {
        log.push_str(&format!("{i},{l}\n"));
    }
    run.write(run.artifact("embedder", "json"), &checkpoint::to_json(&trained.net))?;
    run.write(run.artifact("prototypes", "json"), &archive.to_json())?;
    run.write(run.artifact("proto-log", "csv"), &log)?;
    run.finish(&cfg)
}

pub(super) fn train(args: &CommonArgs, data: &Path, proto: Option<&Path>) -> Result<Vec<PathBuf>> {
    let mut cfg: TrainCmdConfig = load_config(args.config.as_deref())?;
    let uses_proto = matches!(
        cfg.variant,
        EmbeddingVariant::Prototype | EmbeddingVariant::RandomAtInference
    );
    let proto = if uses_proto { proto } else { None };
    let mut inputs = vec![("data", data)];
    if let Some(p) = proto {
        inputs.push(("proto", p));
    }
    let mut run = Run::start("train", args, &mut cfg, &inputs)?;
    cfg.train.validate()?;
    let bench = load_external_dataset(data)?;

    let embedder = match cfg.variant {
        EmbeddingVariant::None => None,
        EmbeddingVariant::Prototype | EmbeddingVariant::RandomAtInference => {
            let path = proto.ok_or_else(|| {
                Error::Config(format!("variant {} needs --proto <embedder checkpoint>", cfg.variant))
            })?;
            Some(load_embedder(path)?)
        }
        EmbeddingVariant::MeanFeature => {
            let mut erm = cfg.train.clone();
            erm.penalty = PenaltyKind::None;
            Some(fit_classifier(&bench, &erm, None)?.model.f_ft)
        }
        EmbeddingVariant::SoftmaxHead => {
            cfg.proto.validate()?;
            Some(softmax_head_train(&train_inputs(&bench), &cfg.proto)?.net)
        }
    };
    if let Some(net) = &embedder {
        if net.in_dim() != bench.dim {
            return Err(Error::Config(format!(
                "embedder takes {}-dim inputs, dataset has {}",
                net.in_dim(),
                bench.dim
            )));
        }
        if let Some(d) = cfg.embed_dim {
            if d != net.out_dim() {
                return Err(Error::Config(format!(
                    "d_D mismatch: config expects {d}, embedder produces {}",
                    net.out_dim()
                )));
            }
        }
    }

    let out = fit_classifier(&bench, &cfg.train, embedder.as_ref())?;
    let sys = TrainedSystem {
        model: out.model,
        embedder,
        variant: cfg.variant,
    };
    let mut log = String::from("round,loss,ce,penalty\n");
    for (i, l) in out.log.iter().enumerate() {
        log.push_str(&format!("{i},{},{},{}\n", l.total, l.ce, l.penalty));
    }
    run.write(run.artifact("model", "json"), &sys.checkpoint().to_json())?;
    run.write(run.artifact("train-log", "csv"), &log)?;
    run.finish(&cfg)
}

pub(super) fn eval(
    args: &CommonArgs,
    model: &Path,
    data: &Path,
    proto_source: Option<ProtoSource>,
) -> Result<Vec<PathBuf>> {
    let mut cfg: EvalCmdConfig = load_config(args.config.as_deref())?;
    if let Some(s) = proto_source {
        cfg.proto_source = s;
    }
    let mut run = Run::start("eval", args, &mut cfg, &[("data", data), ("model", model)])?;
    let sys = TrainedSystem::from_checkpoint(ModelCheckpoint::from_json(&read_text(model)?)?)?;
    let bench = load_external_dataset(data)?;
    if bench.test.is_empty() {
        return Err(Error::Validation(format!("{} has no test domains", data.display())));
    }
    let opts = EvalOptions {
        top_k: cfg.top_k,
        proto_source: cfg.proto_source,
        n_p: cfg.n_p,
        seed: run.seed,
    };
    let mut report = evaluate(&sys, &bench, &opts)?;
    report.config = serde_json::to_value(&cfg).expect("plain data serializes");
    run.write(run.artifact("eval", "csv"), &report.to_csv())?;
    run.write_json(run.artifact("eval", "json"), &report)?;
    run.finish(&cfg)
}

fn sweep_outputs(run: &mut Run, kind: AblateKind, rows: &[SweepRow], k: usize) -> Result<()> {
    let aggregates = aggregate(rows);
    let stem = format!("ablate-{}", kind.name());
    run.write(run.artifact(&stem, "csv"), &write_rows_csv(rows, &aggregates, k))?;
    run.write_json(
        run.artifact(&stem, "json"),
        &json!({ "kind": kind.name(), "rows": rows, "aggregates": aggregates }),
    )
}

pub(super) fn ablate(args: &CommonArgs, kind: AblateKind) -> Result<Vec<PathBuf>> {
    let mut cfg: AblateConfig = load_config(args.config.as_deref())?;
    let mut run = Run::start("ablate", args, &mut cfg, &[])?;
    cfg.experiment.validate()?;
    if cfg.seeds == 0 {
        return Err(Error::Config("seeds must be at least 1".into()));
    }
    let seeds = seeds_from(run.seed, cfg.seeds);
    let exp = &cfg.experiment;
    let k = exp.top_k;
    let stem = format!("ablate-{}", kind.name());
    match kind {
        AblateKind::DomainCount => {
            let rows = ablation_domain_count(
                exp,
                &cfg.n_values,
                cfg.domain_count_mode,
                &cfg.algorithms,
                &seeds,
                run.jobs,
            )?;
            sweep_outputs(&mut run, kind, &rows, k)?;
        }
        AblateKind::TailIndex => {
            let rows = ablation_tail_index(exp, &cfg.f_values, &cfg.algorithms, &seeds, run.jobs)?;
            sweep_outputs(&mut run, kind, &rows, k)?;
        }
        AblateKind::EmbeddingVariant => {
            let rows = ablation_embedding_variant(exp, &cfg.variants, &seeds, run.jobs)?;
            sweep_outputs(&mut run, kind, &rows, k)?;
        }
        AblateKind::PrototypeCount => {
            let rows = ablation_prototype_count(exp, &cfg.n_p_values, &seeds, run.jobs)?;
            sweep_outputs(&mut run, kind, &rows, k)?;
        }
        AblateKind::AdaptivityGap => {
            let gaps = run_parallel(&seeds, run.jobs, |&s| adaptivity_gap(exp, s))?;
            let mut csv = String::from("seed,oracle,universal,adaptive\n");
            let mut results = Vec::new();
            for (s, g) in seeds.iter().zip(&gaps) {
                csv.push_str(&format!("{s},{},{},{}\n", g.oracle, g.universal, g.adaptive));
                results.push(json!({ "seed": s, "oracle": g.oracle, "universal": g.universal, "adaptive": g.adaptive }));
            }
            run.write(run.artifact(&stem, "csv"), &csv)?;
            run.write_json(run.artifact(&stem, "json"), &json!({ "kind": kind.name(), "results": results }))?;
        }
        AblateKind::Lodo => {
            let res = lodo_select(exp, &cfg.grid, run.seed)?;
            let names: Vec<&str> = cfg.grid.params.iter().map(|p| p.name.as_str()).collect();
            let mut csv = format!("point,{},mean_score,selected\n", names.join(","));
            for (i, (p, m)) in cfg.grid.points().iter().zip(&res.mean_scores).enumerate() {
                let vals: Vec<String> = p.values.iter().map(|(_, v)| v.to_string()).collect();
                csv.push_str(&format!("{i},{},{m},{}\n", vals.join(","), i == res.best_index));
            }
            run.write(run.artifact(&stem, "csv"), &csv)?;
            run.write_json(run.artifact(&stem, "json"), &json!({ "kind": kind.name(), "result": res }))?;
        }
    }
    run.finish(&cfg)
}

pub(super) fn consistency(args: &CommonArgs) -> Result<Vec<PathBuf>> {
    let mut cfg: ConsistencyConfig = load_config(args.config.as_deref())?;
    let mut run = Run::start("consistency", args, &mut cfg, &[])?;
    cfg.proto.validate()?;
    let spec = MotherSpec::generate(&cfg.mother)?;
    let net = if cfg.train_net {
        let bench = generate_lt_benchmark(&spec, &cfg.benchmark)?;
        proto_train(&train_inputs(&bench), &cfg.proto)?.net
    } else {
        init_embedding_net(spec.input_dim, &cfg.proto, &mut SplitMix64::new(cfg.proto.sgd.rng_seed))?
    };
    let curve = consistency_experiment(
        &net,
        &spec,
        &cfg.n_grid,
        cfg.trials,
        derive_seed(run.seed, tag("consistency")),
    )?;
    let mut csv = String::from("n,error\n");
    for p in &curve.points {
        csv.push_str(&format!("{},{}\n", p.n, p.error));
    }
    run.write(run.artifact("consistency", "csv"), &csv)?;
    run.write_json(run.artifact("consistency", "json"), &curve)?;
    run.finish(&cfg)
}
