#![allow(dead_code)]

use nalgebra::DMatrix;

/// Central-difference Jacobian of `f` at `x`.
pub fn jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], step: f64) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for c in 0..n {
        xp[c] = x[c] + step;
        let hi = f(&xp);
        xp[c] = x[c] - step;
        let lo = f(&xp);
        xp[c] = x[c];
        for r in 0..m {
            j[(r, c)] = (hi[r] - lo[r]) / (2.0 * step);
        }
    }
    j
}

/// `log|det J|` from an LU factorization independent of the crate's own.
pub fn log_abs_det(j: &DMatrix<f64>) -> f64 {
    j.clone().lu().determinant().abs().ln()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Prints a one-line verdict and returns it.
pub fn report(name: &str, ok: bool, detail: impl std::fmt::Display) -> bool {
    // written to the raw handle so the verdict shows without --nocapture
    use std::io::Write;
    let _ = writeln!(std::io::stderr().lock(), "\n{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

/// Adds `N(0, std²)` noise to every trainable parameter, so zero-initialized
/// projections do not hide gradients.
pub fn perturb<F: pitchflow::ndmath::Real>(
    store: &mut pitchflow::ndmath::ParamStore<F>,
    rng: &mut pitchflow::Rng,
    std: f64,
) {
    use rand_distr::{Distribution, StandardNormal};
    for p in store.iter_mut() {
        if p.trainable {
            for v in p.value.data_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *v = F::c(v.f64() + std * n);
            }
        }
    }
}
