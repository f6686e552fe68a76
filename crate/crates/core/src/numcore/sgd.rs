use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// `w ← w − α (g + λ w)`, returning updated parameters.
pub fn sgd_step(params: &MlpParams, grads: &Gradients, cfg: &SgdConfig) -> Result<MlpParams> {
    let mut next = params.clone();
    sgd_step_in_place(&mut next, grads, cfg)?;
    Ok(next)
}

pub fn sgd_step_in_place(params: &mut MlpParams, grads: &Gradients, cfg: &SgdConfig) -> Result<()> {
    if !params.is_congruent(grads) {
        return Err(Error::shape("sgd_step", "gradients not congruent with parameters"));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient entry in SGD step".into()));
    }
    let (lr, wd) = (cfg.learning_rate, cfg.weight_decay);
    for (p, g) in params.layers_mut().iter_mut().zip(&grads.layers) {
        for (w, &gw) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
            *w -= lr * (gw + wd * *w);
        }
        for (b, &gb) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
            *b -= lr * (gb + wd * *b);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::matrix::Matrix;
    use crate::numcore::mlp::{Activation, Layer};

    fn scalar_net(w: f64) -> MlpParams {
        let layer = Layer::new(Matrix::filled(1, 1, w), Matrix::zeros(1, 1)).unwrap();
        MlpParams::new(vec![layer], Activation::Relu, Activation::Identity).unwrap()
    }

    fn cfg(lr: f64, wd: f64) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            weight_decay: wd,
            rng_seed: 0,
        }
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let p = scalar_net(1.5);
        let g = Gradients::zeros_like(&p);
        assert_eq!(sgd_step(&p, &g, &cfg(0.3, 0.0)).unwrap(), p);
    }

    #[test]
    fn hand_arithmetic() {
        let p = scalar_net(1.0);
        let mut g = Gradients::zeros_like(&p);
        g.set(0, 1.0);
        let next = sgd_step(&p, &g, &cfg(0.1, 0.0)).unwrap();
        assert!((next.param(0) - 0.9).abs() < 1e-15);

        let g0 = Gradients::zeros_like(&p);
        let next = sgd_step(&p, &g0, &cfg(0.1, 0.1)).unwrap();
        assert!((next.param(0) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let p = scalar_net(-2.0);
        let mut g = Gradients::zeros_like(&p);
        g.set(0, 123.0);
        assert_eq!(sgd_step(&p, &g, &cfg(0.0, 0.5)).unwrap(), p);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let p = scalar_net(1.0);
        let mut g = Gradients::zeros_like(&p);
        g.set(0, f64::NAN);
        assert!(matches!(
            sgd_step(&p, &g, &cfg(0.1, 0.0)),
            Err(Error::Numeric(_))
        ));
    }
}
