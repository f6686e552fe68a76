//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report always reaches stdout.
//! Criteria listed in `KNOWN_UNMET` are reported but do not fail the run;
//! the reasoning for each lives in the project notes. Any other failure
//! exits non-zero.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use domgen::adaptive::{
    adaptive_loss, broadcast_mu, coral_penalty, mmd_penalty, AdaptiveModel, Bandwidth, DomainBatch, ModelCheckpoint,
    PenaltyKind, TrainConfig,
};
use domgen::benchgen::{generate_lt_benchmark, read_dataset, write_dataset, BenchmarkSplit, MotherSpec};
use domgen::evalharness::{
    ablation_embedding_variant, ablation_prototype_count, ablation_tail_index, aggregate, consistency_experiment,
    evaluate, fit_classifier, leave_one_domain_out, ExperimentConfig, GridPoint, HyperGrid, SweepRow, TrainedSystem,
    Algorithm,
};
use domgen::numcore::{finite_diff_grad, relative_error, Matrix, MlpParams, SplitMix64};
use domgen::protoembed::{init_embedding_net, proto_loss, proto_train, EmbeddingVariant, ProtoConfig};
use rand::Rng;

const KNOWN_UNMET: &[u32] = &[5];
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const BIN: &str = env!("CARGO_BIN_EXE_domgen");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn rand_mat(rng: &mut SplitMix64, r: usize, c: usize, shift: f64) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0) + shift).collect()).unwrap()
}

// ---------------------------------------------------------------- gradients

// Fresh networks have zero biases, so a row whose inputs to a ReLU unit
// are all zero sits exactly on the kink, where a central difference
// measures half a one-sided slope. Jittering every parameter moves
// instances off the kinks without narrowing what is checked.

/// Relative error, except that two values both below `1e-9` agree: a
/// gradient that is zero by symmetry comes back as ~1e-17 analytically and
/// as ~1e-11 of rounding noise from the central difference.
fn grad_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.abs() < 1e-9 && numeric.abs() < 1e-9 {
        0.0
    } else {
        relative_error(analytic, numeric)
    }
}

fn adaptive_instance(rng: &mut SplitMix64, kind: PenaltyKind, bandwidth: Bandwidth) -> f64 {
    let input = rng.random_range(2..=8);
    let embed = rng.random_range(0..=3);
    let classes = rng.random_range(2..=4);
    let cfg = TrainConfig {
        penalty: kind,
        penalty_weight: rng.random_range(0.1..2.0),
        mmd_bandwidth: bandwidth,
        d_feat: rng.random_range(2..=6),
        d_mlp: rng.random_range(2..=6),
        ..TrainConfig::default()
    };
    let mut model = AdaptiveModel::init(input, embed, classes, &cfg, rng).unwrap();
    for i in 0..model.num_params() {
        model.set_param(i, model.param(i) + rng.random_range(-0.2..0.2));
    }
    let batches: Vec<DomainBatch> = (0..rng.random_range(2..=3))
        .map(|j| {
            let m = rng.random_range(3..=6);
            let mu: Vec<f64> = (0..embed).map(|_| rng.random_range(-1.0..1.0)).collect();
            DomainBatch {
                x: rand_mat(rng, m, input, 0.3 * j as f64),
                mu: broadcast_mu(&mu, m),
                y: (0..m).map(|_| rng.random_range(0..classes)).collect(),
            }
        })
        .collect();
    let (_, g) = adaptive_loss(&model, &batches, &cfg).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..model.num_params() {
        let mut p = model.clone();
        p.set_param(i, model.param(i) + h);
        let up = adaptive_loss(&p, &batches, &cfg).unwrap().0.total;
        p.set_param(i, model.param(i) - h);
        let down = adaptive_loss(&p, &batches, &cfg).unwrap().0.total;
        worst = worst.max(grad_error(g.get(i), (up - down) / (2.0 * h)));
    }
    worst
}

fn proto_instance(rng: &mut SplitMix64) -> f64 {
    let input = rng.random_range(2..=8);
    let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect();
    let cfg = ProtoConfig {
        embed_dim: rng.random_range(2..=4),
        hidden,
        ..ProtoConfig::default()
    };
    let mut net = init_embedding_net(input, &cfg, rng).unwrap();
    for i in 0..net.num_params() {
        net.set_param(i, net.param(i) + rng.random_range(-0.2..0.2));
    }
    let k = rng.random_range(2..=3);
    let mut cloud = |j: usize, max: usize| {
        let m = rng.random_range(2..=max);
        rand_mat(rng, m, input, j as f64)
    };
    let support: Vec<Matrix> = (0..k).map(|j| cloud(j, 4)).collect();
    let query: Vec<Matrix> = (0..k).map(|j| cloud(j, 3)).collect();
    let (_, analytic) = proto_loss(&net, &support, &query).unwrap();
    let numeric = finite_diff_grad(|p| proto_loss(p, &support, &query).unwrap().0, &net, 1e-5);
    (0..net.num_params())
        .map(|i| grad_error(analytic.get(i), numeric.get(i)))
        .fold(0.0, f64::max)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(0x6ad);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for _ in 0..40 {
        worst.push(("ce", adaptive_instance(&mut rng, PenaltyKind::None, Bandwidth::Median)));
    }
    for _ in 0..40 {
        worst.push(("proto", proto_instance(&mut rng)));
    }
    for i in 0..40 {
        let (kind, bw) = match i % 3 {
            0 => (PenaltyKind::Mmd, Bandwidth::Median),
            1 => (PenaltyKind::Mmd, Bandwidth::Fixed(rng.random_range(0.5..2.0))),
            _ => (PenaltyKind::Coral, Bandwidth::Median),
        };
        worst.push(("penalty", adaptive_instance(&mut rng, kind, bw)));
    }
    let elapsed = start.elapsed();
    let failed = worst.iter().filter(|w| !(w.1 < 1e-4)).count();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    outcome(
        failed == 0 && worst.len() >= 100 && elapsed < Duration::from_secs(30),
        format!(
            "{} instances (40 ce, 40 proto, 40 penalty), {failed} over 1e-4, max rel err {max:.2e}, {:.1}s",
            worst.len(),
            secs(elapsed)
        ),
    )
}

// -------------------------------------------------------------- consistency

fn consistency() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let spec = MotherSpec::generate(&cfg.mother).unwrap();
    let bench = generate_lt_benchmark(&spec, &cfg.benchmark).unwrap();
    let inputs: Vec<Matrix> = bench.train.iter().map(|d| d.fit_inputs(bench.dim)).collect();
    let net = proto_train(&inputs, &cfg.proto).unwrap().net;
    let curve = consistency_experiment(&net, &spec, &[16, 64, 256, 1024, 4096], 20, 7).unwrap();
    let elapsed = start.elapsed();
    let slope = curve.slope.unwrap_or(f64::NAN);
    outcome(
        (-0.65..=-0.35).contains(&slope) && elapsed < Duration::from_secs(60),
        format!("slope {slope:.3} (want [-0.65, -0.35]), {:.1}s", secs(elapsed)),
    )
}

// ----------------------------------------------------------------- sweeps

fn mean_top1(rows: &[SweepRow], setting: &str, algorithm: &str) -> f64 {
    aggregate(rows)
        .into_iter()
        .find(|a| a.setting == setting && a.algorithm == algorithm)
        .unwrap_or_else(|| panic!("no rows for {setting}/{algorithm}"))
        .top1_mean
}

fn adaptive_beats_universal(cfg: &ExperimentConfig) -> Outcome {
    let start = Instant::now();
    let f = cfg.benchmark.tail_fraction;
    let rows = ablation_tail_index(cfg, &[f], &[Algorithm::Erm, Algorithm::DaErm], &SEEDS, 1).unwrap();
    let setting = format!("f={f}");
    let erm = mean_top1(&rows, &setting, "erm");
    let da = mean_top1(&rows, &setting, "da-erm");
    let elapsed = start.elapsed();
    let gain = 100.0 * (da - erm);
    outcome(
        (0.4..=0.8).contains(&erm) && gain >= 5.0 && elapsed < Duration::from_secs(300),
        format!(
            "ERM {:.1}%, DA-ERM {:.1}%, gain {gain:+.1} points (want >= 5, ERM in [40, 80]), {:.1}s",
            100.0 * erm,
            100.0 * da,
            secs(elapsed)
        ),
    )
}

fn variant_ordering(cfg: &ExperimentConfig) -> Outcome {
    let variants = [
        EmbeddingVariant::Prototype,
        EmbeddingVariant::RandomAtInference,
        EmbeddingVariant::MeanFeature,
    ];
    let rows = ablation_embedding_variant(cfg, &variants, &SEEDS, 1).unwrap();
    let [proto, random, mean] = variants.map(|v| mean_top1(&rows, "variant", v.name()));
    let margin = 100.0 * (proto - random);
    outcome(
        margin >= 3.0 && proto >= mean,
        format!(
            "prototype {:.1}%, random-at-inference {:.1}% ({margin:+.1}, want >= 3), mean-feature {:.1}%",
            100.0 * proto,
            100.0 * random,
            100.0 * mean
        ),
    )
}

fn tail_index_ordering(cfg: &ExperimentConfig) -> Outcome {
    let rows = ablation_tail_index(cfg, &[0.02, 1.0], &[Algorithm::Erm, Algorithm::DaErm], &SEEDS, 1).unwrap();
    let gain = |s: &str| 100.0 * (mean_top1(&rows, s, "da-erm") - mean_top1(&rows, s, "erm"));
    let (tail, flat) = (gain("f=0.02"), gain("f=1"));
    outcome(
        tail > flat,
        format!("DA-ERM gain {tail:+.1} points at f=0.02 vs {flat:+.1} at f=1.0 (want the first larger)"),
    )
}

fn prototype_count_stability(cfg: &ExperimentConfig) -> Outcome {
    let n_p = [25, 50, 100, 200, 400];
    let rows = ablation_prototype_count(cfg, &n_p, &SEEDS[..1], 1).unwrap();
    let accs: Vec<f64> = n_p
        .iter()
        .map(|n| rows.iter().find(|r| r.setting == format!("n_p={n}")).unwrap().top1)
        .collect();
    let hi = accs.iter().copied().fold(f64::MIN, f64::max);
    let lo = accs.iter().copied().fold(f64::MAX, f64::min);
    let spread = 100.0 * (hi - lo);
    let listed: Vec<String> = accs.iter().map(|a| format!("{:.1}", 100.0 * a)).collect();
    outcome(
        spread <= 2.0,
        format!("top-1 [{}] over n_p {n_p:?}, spread {spread:.2} points (want <= 2)", listed.join(", ")),
    )
}

// ---------------------------------------------------------------- oracles

fn lodo_fold(bench: &BenchmarkSplit, held: usize) -> BenchmarkSplit {
    BenchmarkSplit {
        dim: bench.dim,
        classes: bench.classes,
        train: vec![bench.train[1 - held].clone()],
        val: Vec::new(),
        test: vec![bench.train[held].clone()],
    }
}

fn fold_score(cfg: &ExperimentConfig, fold: &BenchmarkSplit, lr: f64) -> f64 {
    let mut train = cfg.train.clone();
    train.sgd.learning_rate = lr;
    let model = fit_classifier(fold, &train, None).unwrap().model;
    let sys = TrainedSystem {
        model,
        embedder: None,
        variant: EmbeddingVariant::None,
    };
    evaluate(&sys, fold, &cfg.eval_options(0)).unwrap().test_top1().unwrap()
}

fn brute_mmd(f: &[Matrix], h: f64) -> f64 {
    let k = |a: &Matrix, b: &Matrix| {
        let mut s = 0.0;
        for x in a.iter_rows() {
            for y in b.iter_rows() {
                let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
                s += (-d2 / (2.0 * h * h)).exp();
            }
        }
        s / (a.rows() * b.rows()) as f64
    };
    let mut total = 0.0;
    let mut pairs = 0.0;
    for s in 0..f.len() {
        for t in s + 1..f.len() {
            total += k(&f[s], &f[s]) + k(&f[t], &f[t]) - 2.0 * k(&f[s], &f[t]);
            pairs += 1.0;
        }
    }
    total / pairs
}

fn brute_coral(f: &[Matrix]) -> f64 {
    let cov = |x: &Matrix| {
        let (m, d) = (x.rows(), x.cols());
        let mean: Vec<f64> = (0..d).map(|c| x.iter_rows().map(|r| r[c]).sum::<f64>() / m as f64).collect();
        let mut c = vec![0.0; d * d];
        for r in x.iter_rows() {
            for a in 0..d {
                for b in 0..d {
                    c[a * d + b] += (r[a] - mean[a]) * (r[b] - mean[b]) / (m as f64 - 1.0);
                }
            }
        }
        c
    };
    let d = f[0].cols();
    let mut total = 0.0;
    let mut pairs = 0.0;
    for s in 0..f.len() {
        for t in s + 1..f.len() {
            let (a, b) = (cov(&f[s]), cov(&f[t]));
            total += a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / (4.0 * (d * d) as f64);
            pairs += 1.0;
        }
    }
    total / pairs
}

fn oracle_equivalence() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.benchmark.n_train = 2;
    cfg.train.rounds = 60;
    cfg.train.d_feat = 8;
    cfg.train.d_mlp = 8;
    let spec = MotherSpec::generate(&cfg.mother).unwrap();
    let bench = generate_lt_benchmark(&spec, &cfg.benchmark).unwrap();
    let lrs = [0.005, 0.1];
    let grid = HyperGrid::new(&[("learning_rate", &lrs)]);
    let lodo = leave_one_domain_out(&bench.train, &grid, |p: &GridPoint, rest, held| {
        let fold = BenchmarkSplit {
            dim: bench.dim,
            classes: bench.classes,
            train: rest.iter().map(|&d| d.clone()).collect(),
            val: Vec::new(),
            test: vec![held.clone()],
        };
        Ok(fold_score(&cfg, &fold, p.get("learning_rate").unwrap()))
    })
    .unwrap();
    let exhaustive: Vec<Vec<f64>> =
        lrs.iter().map(|&lr| (0..2).map(|h| fold_score(&cfg, &lodo_fold(&bench, h), lr)).collect()).collect();
    let means: Vec<f64> = exhaustive.iter().map(|r| (r[0] + r[1]) / 2.0).collect();
    let best = if means[1] > means[0] { 1 } else { 0 };
    let lodo_ok = lodo.scores == exhaustive && lodo.best_index == best && lodo.mean_scores == means;

    let mut rng = SplitMix64::new(0x0c);
    let mut worst: f64 = 0.0;
    for n_dom in [2, 3] {
        for _ in 0..10 {
            let f: Vec<Matrix> = (0..n_dom).map(|j| rand_mat(&mut rng, 3, 2, 0.2 * j as f64)).collect();
            let h = rng.random_range(0.5..2.0);
            worst = worst.max((mmd_penalty(&f, Bandwidth::Fixed(h)).unwrap().0 - brute_mmd(&f, h)).abs());
            worst = worst.max((coral_penalty(&f).unwrap().0 - brute_coral(&f)).abs());
        }
    }
    outcome(
        lodo_ok && worst < 1e-10,
        format!(
            "LODO {} exhaustive (selected lr {}), penalty max abs diff {worst:.1e} (want < 1e-10)",
            if lodo_ok { "matches" } else { "differs from" },
            lrs[lodo.best_index]
        ),
    )
}

// ------------------------------------------------------------ determinism

fn cli(args: &[&str]) -> i32 {
    Command::new(BIN).args(args).output().expect("binary runs").status.code().unwrap_or(-1)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gen");
    let out_s = out.to_str().unwrap();
    let gen_ok = cli(&["gen", "--seed", "11", "--out", out_s, "--no-timestamp"]) == 0;
    let first = dir_bytes(&out);
    let again_ok = cli(&["gen", "--seed", "11", "--out", out_s, "--no-timestamp"]) == 0;
    let repeat = gen_ok && again_ok && !first.is_empty() && dir_bytes(&out) == first;

    let cfg = ExperimentConfig::default();
    let bench = generate_lt_benchmark(&MotherSpec::generate(&cfg.mother).unwrap(), &cfg.benchmark).unwrap();
    let mut a = Vec::new();
    write_dataset(&bench, &mut a).unwrap();
    let back = read_dataset(a.as_slice()).unwrap();
    let mut b = Vec::new();
    write_dataset(&back, &mut b).unwrap();
    let data_rt = a == b && back.train.len() == bench.train.len();

    let mut rng = SplitMix64::new(5);
    let embedder: MlpParams = init_embedding_net(16, &ProtoConfig::default(), &mut rng).unwrap();
    let model = AdaptiveModel::init(16, embedder.out_dim(), 20, &TrainConfig::default(), &mut rng).unwrap();
    let ck = ModelCheckpoint {
        model: model.clone(),
        embedder: Some(embedder.clone()),
        variant: Some(EmbeddingVariant::Prototype),
    };
    let text = ck.to_json();
    let loaded = ModelCheckpoint::from_json(&text).unwrap();
    let net_back = domgen::numcore::checkpoint::from_json(&domgen::numcore::checkpoint::to_json(&embedder)).unwrap();
    let ck_rt = loaded.model == model && loaded.embedder.as_ref() == Some(&embedder) && net_back == embedder;

    let w = |name: &str, text: &str| {
        let p = tmp.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    };
    let bad_json = w("bad.json", "{ not json");
    let unknown = w("unknown.json", r#"{"mother": {"no_such_field": 1}}"#);
    let data = tmp.path().join("data.jsonl");
    std::fs::write(&data, &a).unwrap();
    let diverge = w(
        "diverge.json",
        r#"{"variant": "none", "train": {"rounds": 50, "d_feat": 8, "d_mlp": 8,
            "sgd": {"learning_rate": 1e306, "weight_decay": 0.0, "rng_seed": 0}}}"#,
    );
    let o = tmp.path().join("o");
    let o = o.to_str().unwrap();
    let codes = [
        ("missing config", cli(&["gen", "--config", "/nonexistent/cfg.json", "--out", o]), 3),
        ("malformed config", cli(&["gen", "--config", &bad_json, "--out", o]), 2),
        ("unknown field", cli(&["gen", "--config", &unknown, "--out", o]), 2),
        ("missing data", cli(&["train-proto", "--data", "/nonexistent/d.jsonl", "--out", o]), 3),
        ("bad flag", cli(&["gen", "--bogus"]), 2),
        (
            "diverging training",
            cli(&["train", "--config", &diverge, "--data", data.to_str().unwrap(), "--out", o]),
            4,
        ),
    ];
    let wrong: Vec<String> = codes
        .iter()
        .filter(|c| c.1 != c.2)
        .map(|c| format!("{} gave {} not {}", c.0, c.1, c.2))
        .collect();
    outcome(
        repeat && data_rt && ck_rt && wrong.is_empty(),
        format!(
            "repeat gen {}, dataset round-trip {}, checkpoint round-trip {}, exit codes {}",
            if repeat { "identical" } else { "DIFFERS" },
            if data_rt { "exact" } else { "INEXACT" },
            if ck_rt { "exact" } else { "INEXACT" },
            if wrong.is_empty() { "as specified".to_string() } else { wrong.join("; ") }
        ),
    )
}

fn main() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "gradient suite", Box::new(gradients)),
        (2, "prototype consistency rate", Box::new(consistency)),
        (3, "adaptive beats universal", Box::new(|| adaptive_beats_universal(&cfg))),
        (4, "embedding variant ordering", Box::new(|| variant_ordering(&cfg))),
        (5, "tail-index ordering", Box::new(|| tail_index_ordering(&cfg))),
        (6, "prototype-count stability", Box::new(|| prototype_count_stability(&cfg))),
        (7, "oracle equivalence", Box::new(oracle_equivalence)),
        (8, "determinism and formats", Box::new(determinism)),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in &criteria {
        let t = Instant::now();
        let o = run();
        let note = if !o.pass && KNOWN_UNMET.contains(id) {
            " [known unmet]"
        } else {
            ""
        };
        println!(
            "criterion {id} {name}: {} ({}){note} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            secs(t.elapsed())
        );
        if !o.pass && !KNOWN_UNMET.contains(id) {
            unexpected.push(*id);
        }
    }
    let total = start.elapsed();
    let in_budget = total < Duration::from_secs(600);
    println!(
        "total runtime: {} ({:.1}s, want < 600s)",
        if in_budget { "PASS" } else { "FAIL" },
        secs(total)
    );
    if !unexpected.is_empty() || !in_budget {
        eprintln!("unexpected acceptance failures: {unexpected:?}");
        std::process::exit(1);
    }
}
