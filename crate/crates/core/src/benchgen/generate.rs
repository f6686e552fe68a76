use rand::seq::index;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{sample_points, BenchmarkSplit, DomainDataset, DomainTransform, MotherSpec};
use crate::error::{Error, Result};
use crate::numcore::rng::{derive_seed, tag, SplitMix64};

/// Long-tailed benchmark layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LtConfig {
    /// Training domain count `N`.
    pub n_train: usize,
    /// Head classes per domain `K`.
    pub head_classes: usize,
    /// Points per head class `A`.
    pub head_count: usize,
    /// Tail fraction `f`: each tail class gets `round(A·f)` points.
    pub tail_fraction: f64,
    pub n_val: usize,
    pub n_test: usize,
    /// Per-class size of a training domain's eval sub-split (head classes;
    /// tails get the same fraction `f`).
    pub train_eval_per_class: usize,
    /// Per-class size of a validation domain's eval sub-split.
    pub val_per_class: usize,
    /// Per-class size of a test domain's eval sub-split.
    pub test_per_class: usize,
    /// Per-class size of a held-out domain's unlabeled prototype pool.
    pub pool_per_class: usize,
}

impl Default for LtConfig {
    fn default() -> Self {
        LtConfig {
            n_train: 12,
            head_classes: 6,
            head_count: 60,
            tail_fraction: 0.1,
            n_val: 3,
            n_test: 4,
            train_eval_per_class: 10,
            val_per_class: 10,
            test_per_class: 30,
            pool_per_class: 70,
        }
    }
}

impl LtConfig {
    /// Points per tail class, banker's rounding.
    pub fn tail_count(&self) -> usize {
        tail_count(self.head_count, self.tail_fraction)
    }

    /// Fit size of every training domain: `K·A + (C−K)·round(A·f)`.
    pub fn train_domain_size(&self, base_classes: usize) -> usize {
        self.head_classes * self.head_count + (base_classes - self.head_classes) * self.tail_count()
    }

    pub fn validate(&self, spec: &MotherSpec) -> Result<()> {
        let c = spec.base_classes;
        if self.n_train == 0 {
            return Err(Error::Config("n_train must be at least 1".into()));
        }
        if self.head_classes == 0 || self.head_classes > c {
            return Err(Error::Config(format!(
                "head_classes must be in 1..={c}, got {}",
                self.head_classes
            )));
        }
        if self.head_count == 0 {
            return Err(Error::Config("head_count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tail_fraction) {
            return Err(Error::Config(format!(
                "tail_fraction must be in [0, 1], got {}",
                self.tail_fraction
            )));
        }
        if (self.n_val > 0 || self.n_test > 0) && self.pool_per_class == 0 {
            return Err(Error::Config("held-out domains need pool_per_class ≥ 1".into()));
        }
        if self.n_test > 0 && self.test_per_class == 0 {
            return Err(Error::Config("test domains need test_per_class ≥ 1".into()));
        }
        Ok(())
    }
}

fn tail_count(head: usize, f: f64) -> usize {
    (head as f64 * f).round_ties_even() as usize
}

fn domain_seed(base: u64, split: &str, index: usize) -> u64 {
    derive_seed(derive_seed(base, tag(split)), index as u64)
}

fn build_training_domain(
    spec: &MotherSpec,
    cfg: &LtConfig,
    index: usize,
) -> Result<DomainDataset> {
    let mut rng = SplitMix64::new(domain_seed(spec.rng_seed, "train", index));
    let transform =
        DomainTransform::sample(spec.shift_kind, spec.shift_magnitude, spec.input_dim, &mut rng);
    let mut heads = index::sample(&mut rng, spec.base_classes, cfg.head_classes).into_vec();
    heads.sort_unstable();
    let tail = cfg.tail_count();
    let eval_tail = tail_count(cfg.train_eval_per_class, cfg.tail_fraction);
    let mut fit_counts = Vec::new();
    let mut eval_counts = Vec::new();
    for class in 0..spec.base_classes {
        let is_head = heads.binary_search(&class).is_ok();
        let (n_fit, n_eval) = if is_head {
            (cfg.head_count, cfg.train_eval_per_class)
        } else {
            (tail, eval_tail)
        };
        if n_fit > 0 {
            fit_counts.push((class, n_fit));
        }
        if n_eval > 0 {
            eval_counts.push((class, n_eval));
        }
    }
    let fit = sample_points(spec, &transform, &fit_counts, &mut rng)?;
    let eval = sample_points(spec, &transform, &eval_counts, &mut rng)?;
    Ok(DomainDataset {
        domain_id: format!("train-{index:03}"),
        fit,
        eval,
        transform: Some(transform),
    })
}

fn build_heldout_domain(
    spec: &MotherSpec,
    cfg: &LtConfig,
    split: &str,
    index: usize,
    seen: &[usize],
    eval_per_class: usize,
) -> Result<DomainDataset> {
    let mut rng = SplitMix64::new(domain_seed(spec.rng_seed, split, index));
    let transform =
        DomainTransform::sample(spec.shift_kind, spec.shift_magnitude, spec.input_dim, &mut rng);
    let k = cfg.head_classes.min(seen.len());
    let mut classes: Vec<usize> = index::sample(&mut rng, seen.len(), k)
        .into_iter()
        .map(|i| seen[i])
        .collect();
    classes.sort_unstable();
    let pool: Vec<(usize, usize)> = classes.iter().map(|&c| (c, cfg.pool_per_class)).collect();
    let eval: Vec<(usize, usize)> = classes
        .iter()
        .filter(|_| eval_per_class > 0)
        .map(|&c| (c, eval_per_class))
        .collect();
    let fit = sample_points(spec, &transform, &pool, &mut rng)?;
    let eval = sample_points(spec, &transform, &eval, &mut rng)?;
    Ok(DomainDataset {
        domain_id: format!("{split}-{index:03}"),
        fit,
        eval,
        transform: Some(transform),
    })
}

/// Build `N` long-tailed training domains plus validation and test domains
/// restricted to classes seen in training. Every domain derives its own
/// seed from the mother seed, so domains are independent of build order.
pub fn generate_lt_benchmark(spec: &MotherSpec, cfg: &LtConfig) -> Result<BenchmarkSplit> {
    cfg.validate(spec)?;
    let train = (0..cfg.n_train)
        .map(|i| build_training_domain(spec, cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let mut seen_flags = vec![false; spec.base_classes];
    for d in &train {
        for s in &d.fit {
            seen_flags[s.y] = true;
        }
    }
    let seen: Vec<usize> = (0..spec.base_classes).filter(|&c| seen_flags[c]).collect();
    let val = (0..cfg.n_val)
        .map(|i| build_heldout_domain(spec, cfg, "val", i, &seen, cfg.val_per_class))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..cfg.n_test)
        .map(|i| build_heldout_domain(spec, cfg, "test", i, &seen, cfg.test_per_class))
        .collect::<Result<Vec<_>>>()?;
    let split = BenchmarkSplit {
        dim: spec.input_dim,
        classes: spec.base_classes,
        train,
        val,
        test,
    };
    split.validate()?;
    Ok(split)
}

/// Keep a random `n` of a domain's fit samples (all if it has fewer).
pub fn subsample_fit(domain: &DomainDataset, n: usize, seed: u64) -> DomainDataset {
    let mut rng = SplitMix64::new(seed);
    let mut idx: Vec<usize> = (0..domain.fit.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(n);
    idx.sort_unstable();
    DomainDataset {
        domain_id: domain.domain_id.clone(),
        fit: idx.iter().map(|&i| domain.fit[i].clone()).collect(),
        eval: domain.eval.clone(),
        transform: domain.transform.clone(),
    }
}
