//! Monotonic alignment search between token prior means and latent frames.

use crate::error::{Error, Result};
use crate::ndmath::{Array, Real};

/// `values[i][t] = log N(z_t; μ_i, I)`, accumulated in 64-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodMatrix {
    pub values: Array<f64>,
}

impl LikelihoodMatrix {
    pub fn new(values: Array<f64>) -> Result<Self> {
        if !values.all_finite() {
            return Err(Error::NonFinite("likelihood matrix".into()));
        }
        Ok(Self { values })
    }

    pub fn tokens(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    /// `Σ_t L[a(t)][t]` for a frame-to-token assignment.
    pub fn path_score(&self, assignment: &[usize]) -> f64 {
        assignment.iter().enumerate().map(|(t, &i)| self.values.get(i, t)).sum()
    }
}

/// Monotone, surjective frame-to-token assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentPath {
    pub assignment: Vec<usize>,
    pub durations: Vec<usize>,
}

impl AlignmentPath {
    pub fn from_assignment(assignment: Vec<usize>, tokens: usize) -> Result<Self> {
        let durations = durations_from_assignment(&assignment, tokens);
        let path = Self { assignment, durations };
        path.validate()?;
        Ok(path)
    }

    /// Token index per frame for the given durations.
    pub fn from_durations(durations: &[usize]) -> Result<Self> {
        let assignment = expand_indices(durations);
        Self::from_assignment(assignment, durations.len())
    }

    /// Checks monotonicity, unit steps and surjectivity.
    pub fn validate(&self) -> Result<()> {
        let a = &self.assignment;
        let bad = |msg: String| Err(Error::invalid("AlignmentPath", msg));
        if a.first() != Some(&0) {
            return bad("path must start at token 0".into());
        }
        for (t, w) in a.windows(2).enumerate() {
            if w[1] != w[0] && w[1] != w[0] + 1 {
                return bad(format!("step {} -> {} at frame {}", w[0], w[1], t + 1));
            }
        }
        if a.last().map(|&l| l + 1) != Some(self.durations.len()) {
            return bad("path must end on the last token".into());
        }
        if self.durations.iter().any(|&d| d == 0) || self.durations.iter().sum::<usize>() != a.len() {
            return bad("durations must be positive and sum to the frame count".into());
        }
        Ok(())
    }
}

/// Frame `t` of `log N(z_t; μ_i, I)`: `−½‖z_t − μ_i‖² − (D/2) ln 2π`.
/// `mu` is `[D × N]` (one column per token), `z` is `[D × T]`.
pub fn likelihoods<F: Real>(mu: &Array<F>, z: &Array<F>) -> Result<LikelihoodMatrix> {
    if mu.rows() != z.rows() {
        return Err(Error::ShapeMismatch {
            op: "likelihoods",
            left: mu.shape().to_vec(),
            right: z.shape().to_vec(),
        });
    }
    let (d, n, t) = (mu.rows(), mu.cols(), z.cols());
    let c = 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut out = Array::zeros(&[n, t]);
    for i in 0..n {
        for f in 0..t {
            let mut s = 0.0;
            for k in 0..d {
                let diff = z.get(k, f).f64() - mu.get(k, i).f64();
                s += diff * diff;
            }
            out.set(i, f, -0.5 * s - c);
        }
    }
    LikelihoodMatrix::new(out)
}

/// Maximum-likelihood monotone alignment by dynamic programming.
///
/// `Q[i][t] = max(Q[i][t−1], Q[i−1][t−1]) + L[i][t]`; backtracking stays on
/// the current token when both predecessors score equally.
pub fn mas(l: &LikelihoodMatrix) -> Result<AlignmentPath> {
    let (n, t) = (l.tokens(), l.frames());
    if n == 0 || t < n {
        return Err(Error::AlignmentTooShort { tokens: n, frames: t });
    }
    let neg = f64::NEG_INFINITY;
    let mut q = vec![neg; n * t];
    q[0] = l.values.get(0, 0);
    for f in 1..t {
        // token i is reachable at frame f only if i ≤ f and N−1−i ≤ T−1−f
        let lo = (n + f).saturating_sub(t);
        for i in lo..n.min(f + 1) {
            let stay = q[i * t + f - 1];
            let advance = if i > 0 { q[(i - 1) * t + f - 1] } else { neg };
            q[i * t + f] = stay.max(advance) + l.values.get(i, f);
        }
    }
    let mut assignment = vec![0; t];
    let mut i = n - 1;
    for f in (0..t).rev() {
        assignment[f] = i;
        if f == 0 {
            break;
        }
        if i > 0 {
            let stay = q[i * t + f - 1];
            let advance = q[(i - 1) * t + f - 1];
            if advance > stay || i == f {
                i -= 1;
            }
        }
    }
    AlignmentPath::from_assignment(assignment, n)
}

fn durations_from_assignment(assignment: &[usize], tokens: usize) -> Vec<usize> {
    let mut d = vec![0; tokens];
    for &i in assignment {
        if i < tokens {
            d[i] += 1;
        }
    }
    d
}

/// Per-token frame counts of a path.
pub fn durations_from_path(path: &AlignmentPath) -> Vec<usize> {
    durations_from_assignment(&path.assignment, path.durations.len())
}

/// Token index repeated by duration: `[0; d₀] ++ [1; d₁] ++ …`.
pub fn expand_indices(durations: &[usize]) -> Vec<usize> {
    durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> LikelihoodMatrix {
        let n = rows.len();
        let t = rows[0].len();
        LikelihoodMatrix::new(Array::from_fn(n, t, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn closed_form_entries() {
        let mu = Array::from_vec(&[1, 1], vec![0.0f64]).unwrap();
        let z = Array::from_vec(&[1, 2], vec![2.0f64, 0.0]).unwrap();
        let l = likelihoods(&mu, &z).unwrap();
        let c = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((l.values.get(0, 0) - (-2.0 - c)).abs() < 1e-12);
        assert!((l.values.get(0, 1) + c).abs() < 1e-12);
    }

    #[test]
    fn single_token_and_square() {
        let p = mas(&matrix(&[&[0.1, -3.0, 2.0]])).unwrap();
        assert_eq!(p.durations, vec![3]);
        let p = mas(&matrix(&[&[0.0, 5.0, 5.0], &[5.0, 0.0, 5.0], &[5.0, 5.0, 0.0]])).unwrap();
        assert_eq!(p.assignment, vec![0, 1, 2]);
        assert_eq!(p.durations, vec![1, 1, 1]);
    }

    #[test]
    fn too_few_frames() {
        let err = mas(&matrix(&[&[0.0], &[0.0]])).unwrap_err().to_string();
        assert!(err.contains("2 tokens") && err.contains("1 frames"), "{err}");
    }

    #[test]
    fn ties_stay_on_token() {
        // backtracking from the last frame keeps the later token on a tie
        let p = mas(&matrix(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]])).unwrap();
        assert_eq!(p.assignment, vec![0, 1, 1]);
    }

    #[test]
    fn counting() {
        let p = AlignmentPath::from_assignment(vec![0, 0, 1, 2, 2, 2], 3).unwrap();
        assert_eq!(durations_from_path(&p), vec![2, 1, 3]);
        assert_eq!(expand_indices(&[2, 1, 3]), p.assignment);
        assert!(AlignmentPath::from_assignment(vec![0, 2, 2], 3).is_err());
    }
}
