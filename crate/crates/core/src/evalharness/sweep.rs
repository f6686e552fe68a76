//! Ablation drivers. Every (setting, seed) cell is independent and may
//! run on its own thread; rows come back in input order regardless.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{evaluate, seeded, train_system, Embedders, ExperimentConfig, TrainedSystem};
use super::select::{apply_grid_point, leave_one_domain_out, HyperGrid, LodoResult};
use crate::adaptive::PenaltyKind;
use crate::benchgen::{generate_lt_benchmark, subsample_fit, BenchmarkSplit, DomainDataset, MotherSpec};
use crate::error::{Error, Result};
use crate::numcore::{derive_seed, tag};
use crate::protoembed::EmbeddingVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Erm,
    DaErm,
    DaMmd,
    DaCoral,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Erm => "erm",
            Algorithm::DaErm => "da-erm",
            Algorithm::DaMmd => "da-mmd",
            Algorithm::DaCoral => "da-coral",
        }
    }

    fn parts(self) -> (EmbeddingVariant, PenaltyKind) {
        match self {
            Algorithm::Erm => (EmbeddingVariant::None, PenaltyKind::None),
            Algorithm::DaErm => (EmbeddingVariant::Prototype, PenaltyKind::None),
            Algorithm::DaMmd => (EmbeddingVariant::Prototype, PenaltyKind::Mmd),
            Algorithm::DaCoral => (EmbeddingVariant::Prototype, PenaltyKind::Coral),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    pub algorithm: String,
    pub seed: u64,
    pub top1: f64,
    pub topk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub setting: String,
    pub algorithm: String,
    pub n_seeds: usize,
    pub top1_mean: f64,
    /// Sample standard deviation; `None` for a single seed.
    pub top1_std: Option<f64>,
    pub topk_mean: f64,
    pub topk_std: Option<f64>,
}

fn mean_std(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

/// Mean ± sample std per (setting, algorithm), in first-appearance order.
pub fn aggregate(rows: &[SweepRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let k = (r.setting.as_str(), r.algorithm.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(s, a)| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.setting == s && r.algorithm == a).collect();
            let (t1, s1) = mean_std(&group.iter().map(|r| r.top1).collect::<Vec<_>>());
            let (tk, sk) = mean_std(&group.iter().map(|r| r.topk).collect::<Vec<_>>());
            AggregateRow {
                setting: s.to_string(),
                algorithm: a.to_string(),
                n_seeds: group.len(),
                top1_mean: t1,
                top1_std: s1,
                topk_mean: tk,
                topk_std: sk,
            }
        })
        .collect()
}

/// `base, base+1, …`.
pub fn seeds_from(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Map `f` over `items` on up to `jobs` threads, keeping input order. The
/// first failing item (in input order) decides the error.
pub fn run_parallel<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let results: Vec<Result<R>> = if jobs <= 1 {
        items.iter().map(&f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
        pool.install(|| items.par_iter().map(&f).collect())
    };
    results.into_iter().collect()
}

/// The benchmark described by `cfg`'s mother and layout sections.
pub fn benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkSplit> {
    let spec = MotherSpec::generate(&cfg.mother)?;
    generate_lt_benchmark(&spec, &cfg.benchmark)
}

fn test_row(
    sys: &TrainedSystem,
    bench: &BenchmarkSplit,
    cfg: &ExperimentConfig,
    seed: u64,
    setting: &str,
    algorithm: &str,
) -> Result<SweepRow> {
    let report = evaluate(sys, bench, &cfg.eval_options(seed))?;
    let test = report
        .test
        .ok_or_else(|| Error::Validation("benchmark has no labeled test domains".into()))?;
    Ok(SweepRow {
        setting: setting.to_string(),
        algorithm: algorithm.to_string(),
        seed,
        top1: test.top1,
        topk: test.topk,
    })
}

fn run_algorithms(
    bench: &BenchmarkSplit,
    cfg: &ExperimentConfig,
    seed: u64,
    setting: &str,
    algorithms: &[Algorithm],
) -> Result<Vec<SweepRow>> {
    let mut emb = Embedders::default();
    algorithms
        .iter()
        .map(|&a| {
            let (variant, penalty) = a.parts();
            let sys = train_system(bench, cfg, variant, penalty, &mut emb)?;
            test_row(&sys, bench, cfg, seed, setting, a.name())
        })
        .collect()
}

fn flatten(cells: Vec<Vec<SweepRow>>) -> Vec<SweepRow> {
    cells.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainCountMode {
    /// Every domain keeps its configured size; total data grows with N.
    FixedPerDomain,
    /// Each of the N training domains keeps `total / N` fit points
    /// (integer division).
    FixedTotal { total: usize },
}

/// Test accuracy as the number of training domains varies.
pub fn ablation_domain_count(
    cfg: &ExperimentConfig,
    n_values: &[usize],
    mode: DomainCountMode,
    algorithms: &[Algorithm],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if n_values.len() < 2 {
        return Err(Error::Config("domain-count sweep needs at least 2 values of N".into()));
    }
    let cells: Vec<(usize, u64)> = n_values.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let out = run_parallel(&cells, jobs, |&(n, seed)| {
        let mut c = seeded(cfg, seed);
        c.benchmark.n_train = n;
        let mut bench = benchmark(&c)?;
        if let DomainCountMode::FixedTotal { total } = mode {
            let per = total / n;
            let size = c.benchmark.train_domain_size(c.mother.base_classes);
            if per == 0 || per > size {
                return Err(Error::Config(format!(
                    "total {total} over {n} domains gives {per} points per domain; need 1..={size}"
                )));
            }
            bench.train = bench
                .train
                .iter()
                .map(|d| subsample_fit(d, per, derive_seed(seed, tag(&d.domain_id))))
                .collect::<Vec<DomainDataset>>();
        }
        run_algorithms(&bench, &c, seed, &format!("n_train={n}"), algorithms)
    })?;
    Ok(flatten(out))
}

/// Test accuracy as the tail fraction `f` varies.
pub fn ablation_tail_index(
    cfg: &ExperimentConfig,
    f_values: &[f64],
    algorithms: &[Algorithm],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if f_values.is_empty() {
        return Err(Error::Config("tail-index sweep needs at least one f".into()));
    }
    let cells: Vec<(f64, u64)> = f_values.iter().flat_map(|&f| seeds.iter().map(move |&s| (f, s))).collect();
    let out = run_parallel(&cells, jobs, |&(f, seed)| {
        let mut c = seeded(cfg, seed);
        c.benchmark.tail_fraction = f;
        let bench = benchmark(&c)?;
        run_algorithms(&bench, &c, seed, &format!("f={f}"), algorithms)
    })?;
    Ok(flatten(out))
}

/// One row per embedding variant and seed. `RandomAtInference` reuses the
/// `Prototype` model.
pub fn ablation_embedding_variant(
    cfg: &ExperimentConfig,
    variants: &[EmbeddingVariant],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if variants.is_empty() {
        return Err(Error::Config("variant sweep needs at least one variant".into()));
    }
    let out = run_parallel(seeds, jobs, |&seed| {
        let c = seeded(cfg, seed);
        let bench = benchmark(&c)?;
        let mut emb = Embedders::default();
        let mut proto_model: Option<TrainedSystem> = None;
        let mut rows = Vec::with_capacity(variants.len());
        for &v in variants {
            let shares = matches!(v, EmbeddingVariant::Prototype | EmbeddingVariant::RandomAtInference);
            let sys = match (&proto_model, shares) {
                (Some(p), true) => TrainedSystem {
                    variant: v,
                    ..p.clone()
                },
                _ => {
                    let s = train_system(&bench, &c, v, PenaltyKind::None, &mut emb)?;
                    if shares {
                        proto_model = Some(s.clone());
                    }
                    s
                }
            };
            rows.push(test_row(&sys, &bench, &c, seed, "variant", v.name())?);
        }
        Ok(rows)
    })?;
    Ok(flatten(out))
}

/// One trained DA-ERM model per seed, evaluated with test prototypes built
/// from `n_p` pool points. Setting `full` uses the whole pool.
pub fn ablation_prototype_count(
    cfg: &ExperimentConfig,
    n_p_values: &[usize],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if n_p_values.is_empty() || n_p_values.contains(&0) {
        return Err(Error::Config("n_p values must be positive and non-empty".into()));
    }
    let out = run_parallel(seeds, jobs, |&seed| {
        let c = seeded(cfg, seed);
        let bench = benchmark(&c)?;
        let sys = train_system(&bench, &c, EmbeddingVariant::Prototype, PenaltyKind::None, &mut Embedders::default())?;
        let settings = n_p_values.iter().map(|&n| Some(n)).chain(std::iter::once(None));
        settings
            .map(|n_p| {
                let mut opts = c.eval_options(seed);
                opts.n_p = n_p;
                let test = evaluate(&sys, &bench, &opts)?
                    .test
                    .ok_or_else(|| Error::Validation("benchmark has no labeled test domains".into()))?;
                Ok(SweepRow {
                    setting: n_p.map_or("n_p=full".to_string(), |n| format!("n_p={n}")),
                    algorithm: Algorithm::DaErm.name().to_string(),
                    seed,
                    top1: test.top1,
                    topk: test.topk,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(flatten(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapResult {
    /// Per-test-domain classifiers trained on that domain's labeled pool.
    pub oracle: f64,
    pub universal: f64,
    pub adaptive: f64,
}

/// Oracle, pooled ERM and DA-ERM test accuracy on one benchmark.
pub fn adaptivity_gap(cfg: &ExperimentConfig, seed: u64) -> Result<GapResult> {
    let c = seeded(cfg, seed);
    let bench = benchmark(&c)?;
    let mut emb = Embedders::default();
    let opts = c.eval_options(seed);
    let universal = evaluate(&train_system(&bench, &c, EmbeddingVariant::None, PenaltyKind::None, &mut emb)?, &bench, &opts)?;
    let adaptive = evaluate(
        &train_system(&bench, &c, EmbeddingVariant::Prototype, PenaltyKind::None, &mut emb)?,
        &bench,
        &opts,
    )?;

    let (mut hits, mut total) = (0.0, 0usize);
    for d in &bench.test {
        if d.eval.is_empty() || d.fit.is_empty() {
            continue;
        }
        let own = BenchmarkSplit {
            dim: bench.dim,
            classes: bench.classes,
            train: vec![d.clone()],
            val: Vec::new(),
            test: vec![d.clone()],
        };
        let sys = train_system(&own, &c, EmbeddingVariant::None, PenaltyKind::None, &mut Embedders::default())?;
        let s = evaluate(&sys, &own, &opts)?.test.expect("eval non-empty");
        hits += s.top1 * s.n as f64;
        total += s.n;
    }
    if total == 0 {
        return Err(Error::Validation("no test domain has both a pool and an eval set".into()));
    }
    let top1 = |r: super::EvalReport| r.test_top1();
    Ok(GapResult {
        oracle: hits / total as f64,
        universal: top1(universal)?,
        adaptive: top1(adaptive)?,
    })
}

/// Leave-one-training-domain-out selection of DA-ERM hyperparameters. The
/// held-out domain's fit points serve as its prototype pool, its eval
/// points as the labeled test set.
pub fn lodo_select(cfg: &ExperimentConfig, grid: &HyperGrid, seed: u64) -> Result<LodoResult> {
    let c = seeded(cfg, seed);
    let bench = benchmark(&c)?;
    leave_one_domain_out(&bench.train, grid, |point, rest, held| {
        let pc = apply_grid_point(&c, point)?;
        let fold = BenchmarkSplit {
            dim: bench.dim,
            classes: bench.classes,
            train: rest.iter().map(|&d| d.clone()).collect(),
            val: Vec::new(),
            test: vec![held.clone()],
        };
        let sys = train_system(&fold, &pc, EmbeddingVariant::Prototype, PenaltyKind::None, &mut Embedders::default())?;
        evaluate(&sys, &fold, &pc.eval_options(seed))?.test_top1()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: &str, a: &str, seed: u64, top1: f64) -> SweepRow {
        SweepRow {
            setting: s.into(),
            algorithm: a.into(),
            seed,
            top1,
            topk: 1.0,
        }
    }

    #[test]
    fn aggregate_mean_and_sample_std() {
        let rows = vec![row("x", "erm", 0, 0.2), row("x", "da-erm", 0, 0.5), row("x", "erm", 1, 0.4)];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].algorithm, "erm");
        assert!((agg[0].top1_mean - 0.3).abs() < 1e-15);
        assert!((agg[0].top1_std.unwrap() - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(agg[1].top1_std, None);
    }

    #[test]
    fn parallel_keeps_order_and_first_error() {
        let items: Vec<u32> = (0..50).collect();
        let seq = run_parallel(&items, 1, |&i| Ok(i * 2)).unwrap();
        let par = run_parallel(&items, 4, |&i| Ok(i * 2)).unwrap();
        assert_eq!(seq, par);
        let err = run_parallel(&items, 4, |&i| {
            if i % 7 == 3 {
                Err(Error::Index(i.to_string()))
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        assert_eq!(err.to_string(), "index error: 3");
    }

    #[test]
    fn sweep_validation() {
        let c = ExperimentConfig::default();
        assert!(ablation_domain_count(&c, &[4], DomainCountMode::FixedPerDomain, &[Algorithm::Erm], &[0], 1).is_err());
        assert!(ablation_prototype_count(&c, &[0, 5], &[0], 1).is_err());
        assert!(ablation_embedding_variant(&c, &[], &[0], 1).is_err());
    }
}
