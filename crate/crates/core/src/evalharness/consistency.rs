//! How fast an n-point prototype approaches the domain's true mean
//! embedding.

use serde::{Deserialize, Serialize};

use crate::benchgen::{sample_iid, DomainTransform, MotherSpec};
use crate::error::{Error, Result};
use crate::numcore::{derive_seed, tag, MlpParams, SplitMix64};
use crate::protoembed::canonical_mean;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    /// Mean over trials of `‖μ_oracle − μ_n‖∞`.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCurve {
    pub n_oracle: usize,
    pub trials: usize,
    pub points: Vec<CurvePoint>,
    /// Least-squares slope of log error against log n; `None` when fewer
    /// than two points have error above `1e-12`.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

const ORACLE_CHUNK: usize = 4096;

/// Least-squares line through `(ln n, ln error)`, skipping errors below
/// `1e-12`.
pub fn fit_loglog(points: &[CurvePoint]) -> Option<(f64, f64)> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.error >= 1e-12 && p.n > 0)
        .map(|p| ((p.n as f64).ln(), p.error.ln()))
        .collect();
    if xy.len() < 2 {
        return None;
    }
    let m = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / m;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Sample one domain from `spec`, estimate its mean embedding from
/// `64·max(n_grid)` points, then average the sup-norm error of fresh
/// `n`-point prototypes over `trials` draws for every `n` in `n_grid`.
pub fn consistency_experiment(
    net: &MlpParams,
    spec: &MotherSpec,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ConsistencyCurve> {
    if n_grid.is_empty() || n_grid[0] == 0 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "n_grid must be non-empty, positive and strictly increasing, got {n_grid:?}"
        )));
    }
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if net.in_dim() != spec.input_dim {
        return Err(Error::Validation(format!(
            "embedding net takes {} inputs, mother spec has {}",
            net.in_dim(),
            spec.input_dim
        )));
    }
    let transform = DomainTransform::sample(
        spec.shift_kind,
        spec.shift_magnitude,
        spec.input_dim,
        &mut SplitMix64::new(derive_seed(seed, tag("domain"))),
    );

    let n_oracle = 64 * n_grid[n_grid.len() - 1];
    let mut rng = SplitMix64::new(derive_seed(seed, tag("oracle")));
    let mut oracle = vec![0.0; net.out_dim()];
    let mut left = n_oracle;
    while left > 0 {
        let take = left.min(ORACLE_CHUNK);
        let emb = net.predict(&sample_iid(spec, &transform, take, &mut rng))?;
        for r in emb.iter_rows() {
            for (o, v) in oracle.iter_mut().zip(r) {
                *o += v;
            }
        }
        left -= take;
    }
    for o in &mut oracle {
        *o /= n_oracle as f64;
    }

    let mut rng = SplitMix64::new(derive_seed(seed, tag("trials")));
    let mut points = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut total = 0.0;
        for _ in 0..trials {
            let mu = canonical_mean(&net.predict(&sample_iid(spec, &transform, n, &mut rng))?)?;
            total += mu
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        }
        points.push(CurvePoint {
            n,
            error: total / trials as f64,
        });
    }
    let fit = fit_loglog(&points);
    Ok(ConsistencyCurve {
        n_oracle,
        trials,
        points,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::{MotherParams, ShiftKind};
    use crate::numcore::{Activation, Layer, Matrix};

    fn spec() -> MotherSpec {
        MotherSpec::generate(&MotherParams {
            base_classes: 4,
            input_dim: 3,
            shift_kind: ShiftKind::Both,
            shift_magnitude: 0.5,
            rng_seed: 2,
            ..MotherParams::default()
        })
        .unwrap()
    }

    #[test]
    fn exact_power_law_fit() {
        let pts: Vec<CurvePoint> = [10usize, 100, 1000]
            .iter()
            .map(|&n| CurvePoint {
                n,
                error: 3.0 * (n as f64).powf(-0.5),
            })
            .collect();
        let (s, b) = fit_loglog(&pts).unwrap();
        assert!((s + 0.5).abs() < 1e-12);
        assert!((b - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_embedding_has_no_slope() {
        let w = Matrix::zeros(3, 2);
        let b = Matrix::from_vec(1, 2, vec![0.5, 1.5]).unwrap();
        let net = MlpParams::new(vec![Layer::new(w, b).unwrap()], Activation::Relu, Activation::Identity).unwrap();
        let c = consistency_experiment(&net, &spec(), &[4, 16], 3, 1).unwrap();
        assert!(c.points.iter().all(|p| p.error == 0.0));
        assert_eq!(c.slope, None);
    }

    #[test]
    fn grid_must_increase() {
        let net = MlpParams::init(&[3, 2], Activation::Relu, Activation::Identity, &mut SplitMix64::new(1)).unwrap();
        assert!(consistency_experiment(&net, &spec(), &[16, 16], 2, 0).is_err());
        assert!(consistency_experiment(&net, &spec(), &[], 2, 0).is_err());
        assert!(consistency_experiment(&net, &spec(), &[4], 0, 0).is_err());
    }

    #[test]
    fn random_net_follows_root_n() {
        let net = MlpParams::init(&[3, 8, 4], Activation::Relu, Activation::Identity, &mut SplitMix64::new(5)).unwrap();
        let c = consistency_experiment(&net, &spec(), &[16, 64, 256, 1024], 20, 3).unwrap();
        let s = c.slope.unwrap();
        assert!((-0.65..=-0.35).contains(&s), "slope {s}");
        for w in c.points.windows(2) {
            assert!(w[1].error <= w[0].error * 1.05);
        }
    }
}
