//! Building blocks of the stochastic duration and pitch predictors:
//! rational-quadratic spline transforms, the dilated depth-separable
//! conditioner, spline coupling flows, and variational augmentation.

mod ddsconv;
mod layers;
pub mod rqs;

pub use ddsconv::DdsConv;
pub use layers::{coupling_chain, flows_forward, flows_inverse, ConvFlow, ElementwiseAffine, PredictorFlow};
pub use rqs::{rqs_forward, rqs_graph, rqs_inverse, SplineConfig, SplineParams};

use rand_distr::{Distribution, StandardNormal};

use crate::ndmath::{Array, Real};
use crate::Rng;

/// Scalar payload with auxiliary Gaussian channels stacked underneath.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedVariable<F> {
    pub payload: Array<F>,
    pub padding: Array<F>,
}

impl<F: Real> AugmentedVariable<F> {
    /// `[(1 + P) × T]` with the payload in row 0.
    pub fn stacked(&self) -> Array<F> {
        Array::concat_rows(&[&self.payload, &self.padding]).expect("same frame count")
    }
}

/// Draws `P` standard-normal padding rows for `payload` and returns the
/// total log-density of the padding.
pub fn variational_augment<F: Real>(payload: &Array<F>, p: usize, rng: &mut Rng) -> (AugmentedVariable<F>, f64) {
    let p = p.max(1);
    let t = payload.cols();
    let padding = Array::from_fn(p, t, |_, _| {
        let u: f64 = StandardNormal.sample(rng);
        F::c(u)
    });
    let log_density = padding_log_density(&padding);
    (
        AugmentedVariable {
            payload: payload.clone(),
            padding,
        },
        log_density,
    )
}

/// `Σ (−u²/2 − ln(2π)/2)` over every element.
pub fn padding_log_density<F: Real>(padding: &Array<F>) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    padding
        .data()
        .iter()
        .map(|u| -0.5 * u.f64() * u.f64() - half_log_2pi)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_padding_density() {
        let pad = Array::row(&[0.7f64]);
        let want = -0.5 * 0.49 - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((padding_log_density(&pad) - want).abs() < 1e-12);
    }

    #[test]
    fn payload_unchanged_and_padding_standard() {
        let mut rng = crate::rng_from_seed(11);
        let payload = Array::row(&[1.0f64, 2.0, 3.0]);
        let (aug, _) = variational_augment(&payload, 1, &mut rng);
        assert_eq!(aug.payload, payload);
        let big = Array::<f64>::zeros(&[1, 100_000]);
        let (aug, ld) = variational_augment(&big, 1, &mut rng);
        let d = aug.padding.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64;
        assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.01, "{mean} {var}");
        assert!((ld - padding_log_density(&aug.padding)).abs() < 1e-9);
        assert_eq!(aug.stacked().shape(), &[2, 100_000]);
    }
}
