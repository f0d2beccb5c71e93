use super::array::{Array, Real};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Linear warm-up to `peak`, then cosine decay to `min_lr` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub min_lr: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            peak: lr,
            warmup_steps: 0,
            total_steps: 0,
            min_lr: lr,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.peak;
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.min_lr + (self.peak - self.min_lr) * cos
    }
}

/// Adam with bias correction and optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    steps_taken: u64,
    first: Vec<Array<F>>,
    second: Vec<Array<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros: Vec<Array<F>> = store.iter().map(|(_, p)| Array::zeros(p.value.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            steps_taken: 0,
            second: zeros.clone(),
            first: zeros,
        }
    }

    pub fn with_clip_norm(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// Moment buffers in parameter order, for checkpointing.
    pub fn moments(&self) -> (&[Array<F>], &[Array<F>]) {
        (&self.first, &self.second)
    }

    pub fn restore(&mut self, steps_taken: u64, first: Vec<Array<F>>, second: Vec<Array<F>>) -> Result<()> {
        if first.len() != self.first.len() || second.len() != self.second.len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        for (a, b) in self.first.iter().zip(&first).chain(self.second.iter().zip(&second)) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: "Adam::restore",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
        }
        self.steps_taken = steps_taken;
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Returns the pre-clipping global gradient norm. A non-finite gradient
    /// aborts the step without touching any parameter.
    pub fn step(&mut self, store: &mut ParamStore<F>, lr: f64) -> Result<f64> {
        let mut sq = 0.0;
        for (_, p) in store.iter().filter(|(_, p)| p.trainable) {
            if !p.grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
            }
            sq += p.grad.data().iter().map(|g| g.f64() * g.f64()).sum::<f64>();
        }
        let norm = sq.sqrt();
        let clip = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };

        self.steps_taken += 1;
        let t = self.steps_taken as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (F::c(self.beta1), F::c(self.beta2));
        let (one, clip_f) = (F::one(), F::c(clip));
        let step_size = F::c(lr / bc1);
        let bc2_sqrt = F::c(bc2.sqrt());
        let eps = F::c(self.eps);

        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g * clip_f;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *w -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
            }
        }
        store.zero_grad();
        Ok(norm)
    }
}
