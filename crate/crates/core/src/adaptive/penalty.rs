//! Distribution-matching penalties over per-domain feature batches.
//!
//! Both return the value together with its gradient with respect to every
//! feature row, one gradient matrix per domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::matrix::sq_dist;
use crate::numcore::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    #[default]
    None,
    Mmd,
    Coral,
}

/// Gaussian kernel bandwidth for MMD.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled batch, recomputed per call.
    #[default]
    Median,
    Fixed(f64),
}

const MEDIAN_FLOOR: f64 = 1e-12;

fn check_dims(features: &[Matrix], min_rows: usize, what: &str) -> Result<usize> {
    if features.len() < 2 {
        return Err(Error::Precondition(format!(
            "{what} needs at least 2 domains, got {}",
            features.len()
        )));
    }
    let d = features[0].cols();
    for (i, f) in features.iter().enumerate() {
        if f.rows() < min_rows {
            return Err(Error::Precondition(format!(
                "{what}: domain {i} has {} rows, need at least {min_rows}",
                f.rows()
            )));
        }
        if f.cols() != d {
            return Err(Error::shape(
                what,
                format!("domain {i} has {} features, domain 0 has {d}", f.cols()),
            ));
        }
    }
    Ok(d)
}

fn split_like(pooled: Matrix, features: &[Matrix]) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(features.len());
    let mut start = 0;
    for f in features {
        out.push(pooled.row_block(start, start + f.rows()));
        start += f.rows();
    }
    out
}

/// Median of pooled pairwise distances `‖a − b‖` over distinct rows, with
/// the (one or two) row pairs it is taken from and their weights.
fn median_distance(z: &Matrix, sq: &[f64]) -> (f64, Vec<(usize, usize, f64)>) {
    let n = z.rows();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((sq[i * n + j].sqrt(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let m = pairs.len();
    if m % 2 == 1 {
        let (r, i, j) = pairs[m / 2];
        (r, vec![(i, j, 1.0)])
    } else {
        let (r1, i1, j1) = pairs[m / 2 - 1];
        let (r2, i2, j2) = pairs[m / 2];
        (0.5 * (r1 + r2), vec![(i1, j1, 0.5), (i2, j2, 0.5)])
    }
}

/// Mean over unordered domain pairs of the biased MMD² estimate with a
/// Gaussian kernel `exp(−‖a−b‖²/2h²)`.
///
/// With [`Bandwidth::Median`] the bandwidth is itself a function of the
/// batch and the returned gradient includes that dependence. A median
/// below `1e-12` falls back to `h = 1`.
pub fn mmd_penalty(features: &[Matrix], bandwidth: Bandwidth) -> Result<(f64, Vec<Matrix>)> {
    let d = check_dims(features, 1, "mmd_penalty")?;
    let n_dom = features.len();
    let refs: Vec<&Matrix> = features.iter().collect();
    let z = Matrix::vstack(&refs)?;
    let n = z.rows();
    let mut owner = Vec::with_capacity(n);
    for (s, f) in features.iter().enumerate() {
        owner.extend(std::iter::repeat_n(s, f.rows()));
    }
    let sizes: Vec<f64> = features.iter().map(|f| f.rows() as f64).collect();

    let mut sq = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(z.row(i), z.row(j));
            sq[i * n + j] = v;
            sq[j * n + i] = v;
        }
    }

    let (h, median_pairs) = match bandwidth {
        Bandwidth::Fixed(h) => {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("fixed bandwidth must be positive, got {h}")));
            }
            (h, Vec::new())
        }
        Bandwidth::Median => {
            let (h, pairs) = median_distance(&z, &sq);
            if h < MEDIAN_FLOOR {
                (1.0, Vec::new())
            } else {
                (h, pairs)
            }
        }
    };

    let n_pairs = (n_dom * (n_dom - 1) / 2) as f64;
    let within = (n_dom - 1) as f64;
    let inv2h2 = 1.0 / (2.0 * h * h);
    let mut value = 0.0;
    let mut dvdh = 0.0;
    let mut grad = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            let (s, t) = (owner[i], owner[j]);
            let w = if s == t {
                within / (sizes[s] * sizes[s])
            } else {
                -1.0 / (sizes[s] * sizes[t])
            } / n_pairs;
            let dij = sq[i * n + j];
            let k = (-dij * inv2h2).exp();
            value += w * k;
            dvdh += w * k * dij / (h * h * h);
            if i != j {
                let a = -w * k * inv2h2;
                for c in 0..d {
                    let diff = z.get(i, c) - z.get(j, c);
                    grad.data_mut()[i * d + c] += 2.0 * a * diff;
                    grad.data_mut()[j * d + c] -= 2.0 * a * diff;
                }
            }
        }
    }
    for (a, b, wt) in median_pairs {
        let r = sq[a * n + b].sqrt();
        for c in 0..d {
            let g = dvdh * wt * (z.get(a, c) - z.get(b, c)) / r;
            grad.data_mut()[a * d + c] += g;
            grad.data_mut()[b * d + c] -= g;
        }
    }
    Ok((value, split_like(grad, features)))
}

fn covariance(x: &Matrix) -> Result<(Matrix, Matrix)> {
    let mean = x.mean_rows()?;
    let mut xc = x.clone();
    let mut neg = mean;
    neg.scale(-1.0);
    xc.add_row_broadcast(&neg)?;
    let mut c = xc.t_matmul(&xc)?;
    c.scale(1.0 / (x.rows() as f64 - 1.0));
    Ok((c, xc))
}

/// Mean over unordered domain pairs of `‖C_s − C_t‖²_F / (4 d²)` with
/// unbiased sample covariances.
pub fn coral_penalty(features: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
    let d = check_dims(features, 2, "coral_penalty")?;
    let n_dom = features.len();
    let n_pairs = (n_dom * (n_dom - 1) / 2) as f64;
    let scale = 1.0 / (4.0 * (d * d) as f64);
    let covs = features.iter().map(covariance).collect::<Result<Vec<_>>>()?;

    let mut value = 0.0;
    let mut gcov: Vec<Matrix> = (0..n_dom).map(|_| Matrix::zeros(d, d)).collect();
    for s in 0..n_dom {
        for t in s + 1..n_dom {
            let diff = covs[s].0.sub(&covs[t].0)?;
            value += diff.frobenius_sq() * scale / n_pairs;
            let g = 2.0 * scale / n_pairs;
            gcov[s].axpy(g, &diff)?;
            gcov[t].axpy(-g, &diff)?;
        }
    }
    let grads = covs
        .iter()
        .zip(&gcov)
        .zip(features)
        .map(|(((_, xc), g), f)| {
            let mut out = xc.matmul(g)?;
            out.scale(2.0 / (f.rows() as f64 - 1.0));
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((value, grads))
}

/// Dispatch on `kind`; `None` contributes nothing.
pub fn penalty(kind: PenaltyKind, features: &[Matrix], bandwidth: Bandwidth) -> Result<(f64, Vec<Matrix>)> {
    match kind {
        PenaltyKind::None => Ok((
            0.0,
            features.iter().map(|f| Matrix::zeros(f.rows(), f.cols())).collect(),
        )),
        PenaltyKind::Mmd => mmd_penalty(features, bandwidth),
        PenaltyKind::Coral => coral_penalty(features),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::SplitMix64;
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_mat(rng: &mut SplitMix64, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn kernel(a: &[f64], b: &[f64], h: f64) -> f64 {
        (-sq_dist(a, b) / (2.0 * h * h)).exp()
    }

    fn brute_mmd(f: &[Matrix], h: f64) -> f64 {
        let mean_k = |a: &Matrix, b: &Matrix| {
            let mut s = 0.0;
            for x in a.iter_rows() {
                for y in b.iter_rows() {
                    s += kernel(x, y, h);
                }
            }
            s / (a.rows() * b.rows()) as f64
        };
        let mut total = 0.0;
        let mut pairs = 0.0;
        for s in 0..f.len() {
            for t in s + 1..f.len() {
                total += mean_k(&f[s], &f[s]) + mean_k(&f[t], &f[t]) - 2.0 * mean_k(&f[s], &f[t]);
                pairs += 1.0;
            }
        }
        total / pairs
    }

    fn brute_median(f: &[Matrix]) -> f64 {
        let rows: Vec<&[f64]> = f.iter().flat_map(|m| m.iter_rows()).collect();
        let mut d = Vec::new();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                d.push(sq_dist(rows[i], rows[j]).sqrt());
            }
        }
        d.sort_by(f64::total_cmp);
        let m = d.len();
        if m % 2 == 1 {
            d[m / 2]
        } else {
            (d[m / 2 - 1] + d[m / 2]) / 2.0
        }
    }

    fn brute_coral(f: &[Matrix]) -> f64 {
        let cov = |x: &Matrix| {
            let (m, d) = x.shape();
            let mut mean = vec![0.0; d];
            for r in x.iter_rows() {
                for c in 0..d {
                    mean[c] += r[c] / m as f64;
                }
            }
            let mut c = vec![vec![0.0; d]; d];
            for r in x.iter_rows() {
                for a in 0..d {
                    for b in 0..d {
                        c[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / (m as f64 - 1.0);
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
                let (cs, ct) = (cov(&f[s]), cov(&f[t]));
                let mut fro = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        fro += (cs[a][b] - ct[a][b]).powi(2);
                    }
                }
                total += fro / (4.0 * (d * d) as f64);
                pairs += 1.0;
            }
        }
        total / pairs
    }

    #[test]
    fn mmd_matches_double_loop() {
        let mut rng = SplitMix64::new(1);
        for n_dom in [2, 3] {
            let f: Vec<Matrix> = (0..n_dom).map(|_| rand_mat(&mut rng, 2, 2)).collect();
            let (v, _) = mmd_penalty(&f, Bandwidth::Median).unwrap();
            assert!((v - brute_mmd(&f, brute_median(&f))).abs() < 1e-10);
            let (v, _) = mmd_penalty(&f, Bandwidth::Fixed(0.7)).unwrap();
            assert!((v - brute_mmd(&f, 0.7)).abs() < 1e-10);
        }
    }

    #[test]
    fn coral_matches_brute_force() {
        let mut rng = SplitMix64::new(2);
        for n_dom in [2, 4] {
            let f: Vec<Matrix> = (0..n_dom).map(|_| rand_mat(&mut rng, 3, 2)).collect();
            let (v, _) = coral_penalty(&f).unwrap();
            assert!((v - brute_coral(&f)).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_batches_give_zero() {
        let mut rng = SplitMix64::new(3);
        let a = rand_mat(&mut rng, 5, 3);
        let f = vec![a.clone(), a.clone()];
        assert!(mmd_penalty(&f, Bandwidth::Median).unwrap().0.abs() < 1e-12);
        assert_eq!(coral_penalty(&f).unwrap().0, 0.0);
    }

    #[test]
    fn coral_ignores_constant_shift() {
        let mut rng = SplitMix64::new(4);
        let a = rand_mat(&mut rng, 6, 3);
        let b = a.map(|v| v + 2.5);
        assert!(coral_penalty(&[a, b]).unwrap().0 < 1e-25);
    }

    #[test]
    fn degenerate_inputs() {
        let a = Matrix::zeros(3, 2);
        assert!(matches!(mmd_penalty(&[a.clone()], Bandwidth::Median), Err(Error::Precondition(_))));
        assert!(matches!(
            mmd_penalty(&[a.clone(), Matrix::zeros(0, 2)], Bandwidth::Median),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            coral_penalty(&[a.clone(), Matrix::zeros(1, 2)]),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(coral_penalty(&[a.clone(), Matrix::zeros(3, 1)]), Err(Error::Shape { .. })));
        // all points equal: median is zero, bandwidth falls back to 1
        let (v, g) = mmd_penalty(&[a.clone(), a], Bandwidth::Median).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|m| m.is_finite()));
    }

    fn fd_check(f: &[Matrix], eval: impl Fn(&[Matrix]) -> (f64, Vec<Matrix>)) {
        let (_, g) = eval(f);
        let h = 1e-6;
        for s in 0..f.len() {
            for k in 0..f[s].data().len() {
                let mut p = f.to_vec();
                p[s].data_mut()[k] += h;
                let up = eval(&p).0;
                p[s].data_mut()[k] -= 2.0 * h;
                let down = eval(&p).0;
                let num = (up - down) / (2.0 * h);
                let a = g[s].data()[k];
                assert!(
                    crate::numcore::relative_error(a, num) < 1e-4,
                    "domain {s} entry {k}: {a} vs {num}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..5 {
            let f: Vec<Matrix> = (0..3).map(|_| rand_mat(&mut rng, 4, 3)).collect();
            fd_check(&f, |x| mmd_penalty(x, Bandwidth::Median).unwrap());
            fd_check(&f, |x| mmd_penalty(x, Bandwidth::Fixed(0.9)).unwrap());
            fd_check(&f, |x| coral_penalty(x).unwrap());
        }
    }

    proptest! {
        #[test]
        fn nonnegative_and_symmetric(seed in any::<u64>(), m in 2usize..6, d in 1usize..4) {
            let mut rng = SplitMix64::new(seed);
            let a = rand_mat(&mut rng, m, d);
            let b = rand_mat(&mut rng, m + 1, d);
            let ab = mmd_penalty(&[a.clone(), b.clone()], Bandwidth::Median).unwrap().0;
            let ba = mmd_penalty(&[b.clone(), a.clone()], Bandwidth::Median).unwrap().0;
            prop_assert!(ab >= -1e-9);
            prop_assert!((ab - ba).abs() < 1e-12);
            let c = coral_penalty(&[a.clone(), b.clone()]).unwrap().0;
            prop_assert!(c >= 0.0);
            prop_assert!((c - coral_penalty(&[b, a]).unwrap().0).abs() < 1e-15);
        }
    }
}
