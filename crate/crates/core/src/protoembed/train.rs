use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{mixup_domains, ProtoConfig};
use crate::error::{Error, Result};
use crate::numcore::loss::cross_entropy_loss;
use crate::numcore::rng::{derive_seed, SplitMix64};
use crate::numcore::{sgd_step_in_place, Activation, Gradients, Matrix, MlpParams};

/// Result of a training run: final weights plus the loss of every round.
#[derive(Debug, Clone)]
pub struct ProtoTrainOutput {
    pub net: MlpParams,
    pub losses: Vec<f64>,
}

/// `d → hidden… → d_D`, ReLU throughout including the embedding layer.
pub fn init_embedding_net(input_dim: usize, cfg: &ProtoConfig, rng: &mut SplitMix64) -> Result<MlpParams> {
    let mut dims = vec![input_dim];
    dims.extend(&cfg.hidden);
    dims.push(cfg.embed_dim);
    MlpParams::init(&dims, Activation::Relu, Activation::Relu, rng)
}

/// Prototypical loss of one episode and its gradient.
///
/// `support[j]` and `query[j]` hold raw inputs of episode domain `j`.
/// Prototypes are support-embedding means; every query is scored by a
/// softmax over negative squared distances to all prototypes and the loss
/// is the mean negative log-probability of its own domain.
pub fn proto_loss(net: &MlpParams, support: &[Matrix], query: &[Matrix]) -> Result<(f64, Gradients)> {
    if support.len() != query.len() || support.is_empty() {
        return Err(Error::Precondition(
            "episode needs matching, non-empty support and query lists".into(),
        ));
    }
    if support.iter().chain(query).any(|m| m.rows() == 0) {
        return Err(Error::Precondition("empty support or query set".into()));
    }
    let k = support.len();
    let parts: Vec<&Matrix> = support.iter().chain(query).collect();
    let batch = Matrix::vstack(&parts)?;
    let (emb, cache) = net.forward(&batch)?;
    let dd = emb.cols();

    let mut s_ranges = Vec::with_capacity(k);
    let mut offset = 0;
    for s in support {
        s_ranges.push(offset..offset + s.rows());
        offset += s.rows();
    }
    let mut q_rows = Vec::new();
    let mut labels = Vec::new();
    for (j, q) in query.iter().enumerate() {
        for _ in 0..q.rows() {
            q_rows.push(offset);
            labels.push(j);
            offset += 1;
        }
    }

    let mut protos = Matrix::zeros(k, dd);
    for (j, r) in s_ranges.iter().enumerate() {
        let n = r.len() as f64;
        for i in r.clone() {
            for (p, v) in protos.row_mut(j).iter_mut().zip(emb.row(i)) {
                *p += v;
            }
        }
        protos.row_mut(j).iter_mut().for_each(|p| *p /= n);
    }

    let nq = q_rows.len();
    let mut logits = Matrix::zeros(nq, k);
    for (qi, &row) in q_rows.iter().enumerate() {
        for j in 0..k {
            logits.set(qi, j, -crate::numcore::matrix::sq_dist(protos.row(j), emb.row(row)));
        }
    }
    let (loss, g) = cross_entropy_loss(&logits, &labels)?;

    // logit_ij = −‖c_j − q_i‖²
    let mut demb = Matrix::zeros(emb.rows(), dd);
    let mut dproto = Matrix::zeros(k, dd);
    for (qi, &row) in q_rows.iter().enumerate() {
        for j in 0..k {
            let gij = g.get(qi, j);
            if gij == 0.0 {
                continue;
            }
            for c in 0..dd {
                let diff = emb.get(row, c) - protos.get(j, c);
                demb.data_mut()[row * dd + c] -= 2.0 * gij * diff;
                dproto.data_mut()[j * dd + c] += 2.0 * gij * diff;
            }
        }
    }
    for (j, r) in s_ranges.iter().enumerate() {
        let n = r.len() as f64;
        for i in r.clone() {
            for c in 0..dd {
                demb.data_mut()[i * dd + c] += dproto.get(j, c) / n;
            }
        }
    }
    let (grads, _) = net.backward(&cache, &demb)?;
    Ok((loss, grads))
}

fn check_domains(domains: &[Matrix], cfg: &ProtoConfig) -> Result<usize> {
    cfg.validate()?;
    if domains.len() < 2 {
        return Err(Error::Config(format!(
            "prototypical training needs at least 2 domains, got {}",
            domains.len()
        )));
    }
    if domains.len() < cfg.domains_per_round && !cfg.mixup {
        return Err(Error::Config(format!(
            "{} domains per round requested but only {} available (enable mixup)",
            cfg.domains_per_round,
            domains.len()
        )));
    }
    let dim = domains[0].cols();
    let need = cfg.support + cfg.query;
    for (i, d) in domains.iter().enumerate() {
        if d.cols() != dim {
            return Err(Error::shape(
                "proto_train",
                format!("domain {i} has dim {}, domain 0 has {dim}", d.cols()),
            ));
        }
        if d.rows() < need {
            return Err(Error::Config(format!(
                "domain {i} has {} points, a round needs {need} (support + query)",
                d.rows()
            )));
        }
    }
    Ok(dim)
}

struct Episode {
    support: Vec<Matrix>,
    query: Vec<Matrix>,
}

fn sample_episode(domains: &[Matrix], cfg: &ProtoConfig, rng: &mut SplitMix64) -> Result<Episode> {
    let r = cfg.domains_per_round.min(domains.len());
    let chosen = index::sample(rng, domains.len(), r).into_vec();
    let mut support = Vec::with_capacity(2 * r);
    let mut query = Vec::with_capacity(2 * r);
    for &d in &chosen {
        let idx = index::sample(rng, domains[d].rows(), cfg.support + cfg.query).into_vec();
        support.push(domains[d].select_rows(&idx[..cfg.support]));
        query.push(domains[d].select_rows(&idx[cfg.support..]));
    }
    if cfg.mixup && r >= 2 {
        let pairs: Vec<(usize, usize)> = (0..r)
            .flat_map(|a| (a + 1..r).map(move |b| (a, b)))
            .collect();
        let take = r.min(pairs.len());
        let (lo, hi) = cfg.mixup_ratio_range;
        for p in index::sample(rng, pairs.len(), take) {
            let (a, b) = pairs[p];
            let ratio = rng.random_range(lo..hi);
            let mut perm_s: Vec<usize> = (0..cfg.support).collect();
            perm_s.shuffle(rng);
            let mut perm_q: Vec<usize> = (0..cfg.query).collect();
            perm_q.shuffle(rng);
            let s = mixup_domains(&support[a], &support[b].select_rows(&perm_s), ratio)?;
            let q = mixup_domains(&query[a], &query[b].select_rows(&perm_q), ratio)?;
            support.push(s);
            query.push(q);
        }
    }
    Ok(Episode { support, query })
}

/// Prototypical training over domain identities.
///
/// Each round samples `N_t` domains without replacement, disjoint support
/// and query sets from each, optionally synthesizes mixup domains from
/// pairs of them, and takes one SGD step on the episode loss.
pub fn proto_train(domains: &[Matrix], cfg: &ProtoConfig) -> Result<ProtoTrainOutput> {
    let dim = check_domains(domains, cfg)?;
    let seed = cfg.sgd.rng_seed;
    let mut init_rng = SplitMix64::new(derive_seed(seed, 0));
    let mut net = init_embedding_net(dim, cfg, &mut init_rng)?;
    let mut rng = SplitMix64::new(derive_seed(seed, 1));
    let mut losses = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let ep = sample_episode(domains, cfg, &mut rng)?;
        let (loss, grads) = proto_loss(&net, &ep.support, &ep.query)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("prototypical loss diverged at round {}", round + 1)));
        }
        sgd_step_in_place(&mut net, &grads, &cfg.sgd)
            .map_err(|e| Error::Numeric(format!("round {}: {e}", round + 1)))?;
        losses.push(loss);
    }
    Ok(ProtoTrainOutput { net, losses })
}

/// Domain-ID classifier with the embedding net's trunk plus a linear head,
/// trained with cross-entropy on the same episodes. Returns the trunk.
pub fn softmax_head_train(domains: &[Matrix], cfg: &ProtoConfig) -> Result<ProtoTrainOutput> {
    let dim = check_domains(domains, cfg)?;
    let seed = cfg.sgd.rng_seed;
    let mut init_rng = SplitMix64::new(derive_seed(seed, 0));
    let mut dims = vec![dim];
    dims.extend(&cfg.hidden);
    dims.push(cfg.embed_dim);
    dims.push(domains.len());
    let mut net = MlpParams::init(&dims, Activation::Relu, Activation::Identity, &mut init_rng)?;
    let mut rng = SplitMix64::new(derive_seed(seed, 1));
    let mut losses = Vec::with_capacity(cfg.rounds);
    let r = cfg.domains_per_round.min(domains.len());
    let per = cfg.support + cfg.query;
    for round in 0..cfg.rounds {
        let chosen = index::sample(&mut rng, domains.len(), r).into_vec();
        let mut parts = Vec::with_capacity(r);
        let mut labels = Vec::with_capacity(r * per);
        for &d in &chosen {
            let idx = index::sample(&mut rng, domains[d].rows(), per).into_vec();
            parts.push(domains[d].select_rows(&idx));
            labels.extend(std::iter::repeat_n(d, per));
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        let batch = Matrix::vstack(&refs)?;
        let (logits, cache) = net.forward(&batch)?;
        let (loss, dlogits) = cross_entropy_loss(&logits, &labels)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("domain classifier diverged at round {}", round + 1)));
        }
        let (grads, _) = net.backward(&cache, &dlogits)?;
        sgd_step_in_place(&mut net, &grads, &cfg.sgd)
            .map_err(|e| Error::Numeric(format!("round {}: {e}", round + 1)))?;
        losses.push(loss);
    }
    let trunk = net.truncated(net.layers().len() - 1)?;
    Ok(ProtoTrainOutput { net: trunk, losses })
}

/// Fraction of rows whose nearest prototype (squared distance) is their
/// own domain.
pub fn nearest_prototype_accuracy(net: &MlpParams, protos: &Matrix, points: &[Matrix]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (j, pts) in points.iter().enumerate() {
        let emb = net.predict(pts)?;
        for r in emb.iter_rows() {
            let logits: Vec<f64> = protos
                .iter_rows()
                .map(|p| -crate::numcore::matrix::sq_dist(p, r))
                .collect();
            let best = logits
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            correct += usize::from(best == j);
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_grad, relative_error};
    use crate::protoembed::compute_prototype;
    use rand_distr::StandardNormal;

    fn cloud(rng: &mut SplitMix64, center: &[f64], n: usize, scale: f64) -> Matrix {
        let d = center.len();
        let data = (0..n * d)
            .map(|i| center[i % d] + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    fn small_cfg(rounds: usize, seed: u64) -> ProtoConfig {
        ProtoConfig {
            embed_dim: 4,
            hidden: vec![8],
            domains_per_round: 2,
            support: 5,
            query: 5,
            rounds,
            sgd: crate::numcore::SgdConfig {
                learning_rate: 0.05,
                weight_decay: 0.0,
                rng_seed: seed,
            },
            mixup: false,
            mixup_ratio_range: (0.2, 0.8),
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(21);
        let cfg = small_cfg(0, 0);
        let net = init_embedding_net(3, &cfg, &mut rng).unwrap();
        let support: Vec<Matrix> = (0..3).map(|j| cloud(&mut rng, &[j as f64, 0.0, 1.0], 4, 1.0)).collect();
        let query: Vec<Matrix> = (0..3).map(|j| cloud(&mut rng, &[j as f64, 0.0, 1.0], 3, 1.0)).collect();
        let (_, analytic) = proto_loss(&net, &support, &query).unwrap();
        let numeric = finite_diff_grad(|p| proto_loss(p, &support, &query).unwrap().0, &net, 1e-5);
        for i in 0..net.num_params() {
            let (a, n) = (analytic.get(i), numeric.get(i));
            assert!(relative_error(a, n) < 1e-4, "param {i}: {a} vs {n}");
        }
    }

    #[test]
    fn zero_rounds_returns_initialization() {
        let mut rng = SplitMix64::new(3);
        let domains = vec![cloud(&mut rng, &[0.0, 0.0], 20, 1.0), cloud(&mut rng, &[3.0, 0.0], 20, 1.0)];
        let cfg = small_cfg(0, 9);
        let out = proto_train(&domains, &cfg).unwrap();
        let mut init_rng = SplitMix64::new(derive_seed(9, 0));
        assert_eq!(out.net, init_embedding_net(2, &cfg, &mut init_rng).unwrap());
        assert!(out.losses.is_empty());
    }

    #[test]
    fn too_small_domain_is_config_error() {
        let mut rng = SplitMix64::new(3);
        let domains = vec![cloud(&mut rng, &[0.0], 20, 1.0), cloud(&mut rng, &[1.0], 9, 1.0)];
        assert!(matches!(proto_train(&domains, &small_cfg(5, 0)), Err(Error::Config(_))));
        assert!(matches!(proto_train(&domains[..1], &small_cfg(5, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn separated_domains_become_separable() {
        let mut rng = SplitMix64::new(5);
        let centers = [[0.0, 0.0, 0.0], [6.0, 0.0, 0.0]];
        let train: Vec<Matrix> = centers.iter().map(|c| cloud(&mut rng, c, 60, 0.7)).collect();
        let held: Vec<Matrix> = centers.iter().map(|c| cloud(&mut rng, c, 200, 0.7)).collect();
        let out = proto_train(&train, &small_cfg(300, 1)).unwrap();
        let protos: Vec<_> = train
            .iter()
            .enumerate()
            .map(|(j, d)| compute_prototype(&out.net, d, j.to_string()).unwrap().mu)
            .collect();
        let pm = Matrix::from_rows(&protos, 4).unwrap();
        let acc = nearest_prototype_accuracy(&out.net, &pm, &held).unwrap();
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn training_is_bit_reproducible_with_mixup() {
        let mut rng = SplitMix64::new(6);
        let domains: Vec<Matrix> = (0..3).map(|j| cloud(&mut rng, &[j as f64, 1.0], 15, 1.0)).collect();
        let cfg = ProtoConfig {
            mixup: true,
            domains_per_round: 3,
            ..small_cfg(20, 4)
        };
        let a = proto_train(&domains, &cfg).unwrap();
        let b = proto_train(&domains, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn mixup_lets_few_domains_fill_a_round() {
        let mut rng = SplitMix64::new(6);
        let domains: Vec<Matrix> = (0..3).map(|j| cloud(&mut rng, &[j as f64], 12, 1.0)).collect();
        let plain = ProtoConfig {
            domains_per_round: 4,
            ..small_cfg(3, 0)
        };
        assert!(proto_train(&domains, &plain).is_err());
        let mixed = ProtoConfig { mixup: true, ..plain };
        let ep = sample_episode(&domains, &mixed, &mut SplitMix64::new(1)).unwrap();
        assert_eq!(ep.support.len(), 6);
        assert!(proto_train(&domains, &mixed).is_ok());
    }

    #[test]
    fn softmax_trunk_has_embedding_shape() {
        let mut rng = SplitMix64::new(8);
        let domains: Vec<Matrix> = (0..3).map(|j| cloud(&mut rng, &[j as f64, 0.0], 15, 0.5)).collect();
        let out = softmax_head_train(&domains, &small_cfg(10, 2)).unwrap();
        assert_eq!(out.net.in_dim(), 2);
        assert_eq!(out.net.out_dim(), 4);
        assert_eq!(out.net.output_activation(), Activation::Relu);
        assert_eq!(out.losses.len(), 10);
    }
}
