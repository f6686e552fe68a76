//! Domain embeddings learned by prototypical training over domain
//! identities, and the prototypes (mean embeddings) built from them.

mod archive;
mod train;
mod variant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::matrix::sq_dist;
use crate::numcore::{Matrix, MlpParams, SgdConfig};

pub use archive::{PrototypeArchive, PrototypeRecord};
pub use train::{
    init_embedding_net, nearest_prototype_accuracy, proto_loss, proto_train, softmax_head_train,
    ProtoTrainOutput,
};
pub use variant::{embed_variant, EmbeddingVariant, VariantContext};

/// Prototypical training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtoConfig {
    /// Embedding dimension `d_D`.
    pub embed_dim: usize,
    /// Hidden widths of the embedding network.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Domains sampled per round, `N_t`.
    pub domains_per_round: usize,
    /// Support points per domain, `N_s`.
    pub support: usize,
    /// Query points per domain, `N_q`.
    pub query: usize,
    pub rounds: usize,
    pub sgd: SgdConfig,
    #[serde(default)]
    pub mixup: bool,
    #[serde(default = "default_mixup_range")]
    pub mixup_ratio_range: (f64, f64),
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

fn default_mixup_range() -> (f64, f64) {
    (0.2, 0.8)
}

impl Default for ProtoConfig {
    fn default() -> Self {
        let (support, query) = ProtoConfig::support_query_split(32, 12);
        ProtoConfig {
            embed_dim: 32,
            hidden: default_hidden(),
            domains_per_round: 4,
            support,
            query,
            rounds: 300,
            sgd: SgdConfig {
                learning_rate: 0.05,
                weight_decay: 1e-5,
                rng_seed: 0,
            },
            mixup: false,
            mixup_ratio_range: default_mixup_range(),
        }
    }
}

impl ProtoConfig {
    /// Split a per-domain batch into (support, query): half support with
    /// at most 10 domains, 80% support beyond that.
    pub fn support_query_split(batch: usize, n_domains: usize) -> (usize, usize) {
        let frac = if n_domains <= 10 { 0.5 } else { 0.8 };
        let support = ((batch as f64 * frac).round() as usize).clamp(1, batch.saturating_sub(1).max(1));
        (support, batch.saturating_sub(support).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if self.domains_per_round == 0 || self.support == 0 || self.query == 0 {
            return Err(Error::Config(
                "domains_per_round, support and query must all be at least 1".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        self.sgd.validate()?;
        if self.mixup {
            let (lo, hi) = self.mixup_ratio_range;
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return Err(Error::Config(format!(
                    "mixup ratio range must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// Mean embedding of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPrototype {
    pub domain_id: String,
    pub mu: Vec<f64>,
    pub n_points: usize,
}

impl DomainPrototype {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `p(x ∈ D_j) ∝ exp(−‖μ_j − Φ(x)‖²)`, one row per query embedding.
pub fn domain_membership_probs(queries: &Matrix, prototypes: &[DomainPrototype]) -> Result<Matrix> {
    if prototypes.is_empty() {
        return Err(Error::Precondition("at least one prototype required".into()));
    }
    for p in prototypes {
        if p.dim() != queries.cols() {
            return Err(Error::shape(
                "domain_membership_probs",
                format!(
                    "prototype {} has dim {}, queries have {}",
                    p.domain_id,
                    p.dim(),
                    queries.cols()
                ),
            ));
        }
    }
    let mut logits = Matrix::zeros(queries.rows(), prototypes.len());
    for (i, q) in queries.iter_rows().enumerate() {
        for (j, p) in prototypes.iter().enumerate() {
            logits.set(i, j, -sq_dist(&p.mu, q));
        }
    }
    Ok(crate::numcore::softmax_rows(&logits))
}

/// Mean of rows taken in lexicographic order, so any permutation of the
/// input rows yields a bit-identical result.
pub fn canonical_mean(rows: &Matrix) -> Result<Vec<f64>> {
    if rows.rows() == 0 {
        return Err(Error::Precondition("mean of zero points".into()));
    }
    let mut order: Vec<usize> = (0..rows.rows()).collect();
    order.sort_by(|&a, &b| {
        rows.row(a)
            .iter()
            .zip(rows.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut sum = vec![0.0; rows.cols()];
    for i in order {
        for (s, v) in sum.iter_mut().zip(rows.row(i)) {
            *s += v;
        }
    }
    let n = rows.rows() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// `μ = (1/n) Σ Φ(x)` over `points` with a trained embedding net.
pub fn compute_prototype(
    net: &MlpParams,
    points: &Matrix,
    domain_id: impl Into<String>,
) -> Result<DomainPrototype> {
    if points.rows() == 0 {
        return Err(Error::Precondition("prototype from an empty point set".into()));
    }
    let emb = net.predict(points)?;
    Ok(DomainPrototype {
        domain_id: domain_id.into(),
        mu: canonical_mean(&emb)?,
        n_points: points.rows(),
    })
}

/// `ratio·A + (1−ratio)·B`, row `i` of `A` with row `i` of `B`. Callers
/// shuffle the inputs beforehand to pair arbitrary points.
pub fn mixup_domains(a: &Matrix, b: &Matrix, ratio: f64) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "mixup_domains",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Precondition(format!("mixup ratio {ratio} outside (0, 1)")));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| ratio * x + (1.0 - ratio) * y)
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

/// Spread of embeddings around their domain prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVarianceReport {
    /// `(domain_id, mean ‖Φ(x) − μ‖²)`.
    pub per_domain: Vec<(String, f64)>,
    pub max: f64,
    pub mean: f64,
}

pub fn feature_variance(net: &MlpParams, domains: &[(&str, &Matrix)]) -> Result<FeatureVarianceReport> {
    let mut per_domain = Vec::with_capacity(domains.len());
    for &(id, points) in domains {
        let emb = net.predict(points)?;
        let mu = canonical_mean(&emb)?;
        let var = emb.iter_rows().map(|r| sq_dist(r, &mu)).sum::<f64>() / emb.rows() as f64;
        per_domain.push((id.to_string(), var));
    }
    let max = per_domain.iter().map(|p| p.1).fold(0.0, f64::max);
    let mean = if per_domain.is_empty() {
        0.0
    } else {
        per_domain.iter().map(|p| p.1).sum::<f64>() / per_domain.len() as f64
    };
    Ok(FeatureVarianceReport {
        per_domain,
        max,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Activation, Layer, SplitMix64};
    use proptest::prelude::*;
    use rand::Rng;

    fn proto(id: &str, mu: &[f64]) -> DomainPrototype {
        DomainPrototype {
            domain_id: id.into(),
            mu: mu.to_vec(),
            n_points: 1,
        }
    }

    fn identity_net(d: usize) -> MlpParams {
        MlpParams::new(
            vec![Layer::new(Matrix::identity(d), Matrix::zeros(1, d)).unwrap()],
            Activation::Relu,
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn single_prototype_is_certain() {
        let q = Matrix::from_vec(3, 2, vec![0.0, 1.0, 5.0, -3.0, 2.0, 2.0]).unwrap();
        let p = domain_membership_probs(&q, &[proto("a", &[1.0, 1.0])]).unwrap();
        assert!(p.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn equidistant_prototypes_split_evenly() {
        let q = Matrix::row_vector(&[0.0, 0.0]);
        let p = domain_membership_probs(&q, &[proto("a", &[1.0, 0.0]), proto("b", &[0.0, -1.0])])
            .unwrap();
        assert!((p.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_probability() {
        let q = Matrix::row_vector(&[0.0, 0.0]);
        let p = domain_membership_probs(&q, &[proto("a", &[0.0, 0.0]), proto("b", &[1.0, 0.0])])
            .unwrap();
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p.get(0, 0) - expected).abs() < 1e-15);
        assert!((p.get(0, 0) - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn membership_dim_mismatch() {
        let q = Matrix::row_vector(&[0.0, 0.0]);
        assert!(domain_membership_probs(&q, &[proto("a", &[0.0])]).is_err());
        assert!(domain_membership_probs(&q, &[]).is_err());
    }

    proptest! {
        #[test]
        fn membership_rows_normalized_and_translation_invariant(
            seed in any::<u64>(), k in 1usize..6, shift in -3.0f64..3.0
        ) {
            let mut rng = SplitMix64::new(seed);
            let d = 3;
            let protos: Vec<_> = (0..k)
                .map(|j| proto(&j.to_string(), &(0..d).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>()))
                .collect();
            let q = Matrix::from_vec(4, d, (0..4 * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let p = domain_membership_probs(&q, &protos).unwrap();
            for r in p.iter_rows() {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(r.iter().all(|&v| v > 0.0 && v <= 1.0));
            }
            let moved: Vec<_> = protos.iter().map(|p| proto(&p.domain_id, &p.mu.iter().map(|v| v + shift).collect::<Vec<_>>())).collect();
            let q2 = q.map(|v| v + shift);
            let p2 = domain_membership_probs(&q2, &moved).unwrap();
            for (a, b) in p.data().iter().zip(p2.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn prototype_is_order_invariant_and_mean_decomposes(seed in any::<u64>(), n in 1usize..12, m in 1usize..12) {
            let mut rng = SplitMix64::new(seed);
            let net = crate::numcore::MlpParams::init(&[3, 5, 4], Activation::Relu, Activation::Relu, &mut rng).unwrap();
            let a = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let b = Matrix::from_vec(m, 3, (0..m * 3).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let pa = compute_prototype(&net, &a, "a").unwrap();
            let pa_perm = compute_prototype(&net, &a.select_rows(&perm), "a").unwrap();
            prop_assert!(pa.mu.iter().zip(&pa_perm.mu).all(|(x, y)| x.to_bits() == y.to_bits()));

            let pb = compute_prototype(&net, &b, "b").unwrap();
            let ab = compute_prototype(&net, &Matrix::vstack(&[&a, &b]).unwrap(), "ab").unwrap();
            for i in 0..4 {
                let expect = (n as f64 * pa.mu[i] + m as f64 * pb.mu[i]) / (n + m) as f64;
                prop_assert!((ab.mu[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prototype_of_repeated_point() {
        let mut rng = SplitMix64::new(8);
        let net = MlpParams::init(&[2, 4, 3], Activation::Relu, Activation::Relu, &mut rng).unwrap();
        let x0 = [0.3, -1.2];
        let pts = Matrix::from_rows(&vec![x0; 7], 2).unwrap();
        let p = compute_prototype(&net, &pts, "d").unwrap();
        let single = net.predict(&Matrix::row_vector(&x0)).unwrap();
        for (a, b) in p.mu.iter().zip(single.row(0)) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
        assert_eq!(p.n_points, 7);
        assert!(compute_prototype(&net, &Matrix::zeros(0, 2), "e").is_err());
    }

    #[test]
    fn prototype_of_two_embeddings() {
        let pts = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = compute_prototype(&identity_net(2), &pts, "d").unwrap();
        assert_eq!(p.mu, vec![0.5, 0.5]);
    }

    #[test]
    fn mixup_examples() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(mixup_domains(&a, &a, 0.5).unwrap(), a);
        let z = Matrix::zeros(3, 2);
        let o = Matrix::filled(3, 2, 1.0);
        let m = mixup_domains(&z, &o, 0.2).unwrap();
        assert!(m.data().iter().all(|&v| (v - 0.8).abs() < 1e-15));
        assert!(mixup_domains(&z, &Matrix::zeros(2, 2), 0.5).is_err());
        assert!(mixup_domains(&z, &o, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn mixup_is_convex(seed in any::<u64>(), ratio in 0.01f64..0.99) {
            let mut rng = SplitMix64::new(seed);
            let a = Matrix::from_vec(3, 2, (0..6).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
            let b = Matrix::from_vec(3, 2, (0..6).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
            let m = mixup_domains(&a, &b, ratio).unwrap();
            for ((x, y), v) in a.data().iter().zip(b.data()).zip(m.data()) {
                prop_assert!(*v >= x.min(*y) - 1e-12 && *v <= x.max(*y) + 1e-12);
            }
        }
    }

    #[test]
    fn variance_examples() {
        let zero = MlpParams::new(
            vec![Layer::new(Matrix::zeros(2, 3), Matrix::zeros(1, 3)).unwrap()],
            Activation::Relu,
            Activation::Identity,
        )
        .unwrap();
        let a = Matrix::from_vec(3, 2, vec![1.0, 2.0, -3.0, 0.5, 7.0, 7.0]).unwrap();
        let single = Matrix::row_vector(&[4.0, -1.0]);
        let r = feature_variance(&zero, &[("a", &a), ("b", &single)]).unwrap();
        assert!(r.per_domain.iter().all(|p| p.1 == 0.0));

        let r = feature_variance(&identity_net(2), &[("s", &single)]).unwrap();
        assert_eq!(r.per_domain[0].1, 0.0);

        let two = Matrix::from_vec(2, 2, vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        let r = feature_variance(&identity_net(2), &[("t", &two)]).unwrap();
        assert!((r.per_domain[0].1 - 1.0).abs() < 1e-15);
        assert_eq!(r.max, 1.0);
    }

    #[test]
    fn support_query_rule() {
        assert_eq!(ProtoConfig::support_query_split(32, 4), (16, 16));
        assert_eq!(ProtoConfig::support_query_split(80, 45), (64, 16));
        assert_eq!(ProtoConfig::support_query_split(2, 3), (1, 1));
    }
}
