use super::mlp::{Gradients, MlpParams};

/// Central differences `(f(w+h) − f(w−h)) / 2h` for every parameter.
pub fn finite_diff_grad<F>(mut f: F, params: &MlpParams, h: f64) -> Gradients
where
    F: FnMut(&MlpParams) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut grads = Gradients::zeros_like(params);
    let mut probe = params.clone();
    for i in 0..params.num_params() {
        let w = params.param(i);
        probe.set_param(i, w + h);
        let up = f(&probe);
        probe.set_param(i, w - h);
        let down = f(&probe);
        probe.set_param(i, w);
        grads.set(i, (up - down) / (2.0 * h));
    }
    grads
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
