//! Small dense linear algebra for the invertible 1x1 convolution.

use super::array::{Array, Real};
use crate::error::{Error, Result};

/// `A = P · L · U` with `L` unit lower-triangular and `U` upper-triangular.
#[derive(Clone, Debug)]
pub struct Lu<F> {
    pub perm: Array<F>,
    pub lower: Array<F>,
    pub upper: Array<F>,
}

/// LU factorization with partial pivoting.
pub fn lu<F: Real>(a: &Array<F>) -> Result<Lu<F>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::invalid("lu", format!("matrix must be square, got {:?}", a.shape())));
    }
    let mut m = a.clone();
    let mut rows: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let pivot = (k..n)
            .max_by(|&i, &j| m.get(i, k).abs().partial_cmp(&m.get(j, k).abs()).unwrap())
            .unwrap();
        if m.get(pivot, k) == F::zero() {
            return Err(Error::Singular { cond: f64::INFINITY });
        }
        if pivot != k {
            for c in 0..n {
                let (x, y) = (m.get(k, c), m.get(pivot, c));
                m.set(k, c, y);
                m.set(pivot, c, x);
            }
            rows.swap(k, pivot);
        }
        let d = m.get(k, k);
        for i in k + 1..n {
            let f = m.get(i, k) / d;
            m.set(i, k, f);
            for c in k + 1..n {
                let v = m.get(i, c) - f * m.get(k, c);
                m.set(i, c, v);
            }
        }
    }
    // PA = LU with row permutation `rows`; A = Pᵀ L U.
    let perm = Array::from_fn(n, n, |i, j| if rows[j] == i { F::one() } else { F::zero() });
    let lower = Array::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => m.get(i, j),
        std::cmp::Ordering::Equal => F::one(),
        std::cmp::Ordering::Less => F::zero(),
    });
    let upper = Array::from_fn(n, n, |i, j| if j >= i { m.get(i, j) } else { F::zero() });
    Ok(Lu { perm, lower, upper })
}

fn norm1<F: Real>(a: &Array<F>) -> f64 {
    (0..a.cols())
        .map(|c| (0..a.rows()).map(|r| a.get(r, c).abs().f64()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Gauss–Jordan inverse with partial pivoting. Fails when the 1-norm
/// condition number exceeds `max_cond`, reporting the estimate.
pub fn inverse<F: Real>(a: &Array<F>, max_cond: f64) -> Result<Array<F>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::invalid("inverse", format!("matrix must be square, got {:?}", a.shape())));
    }
    let mut m: Vec<f64> = a.data().iter().map(|x| x.f64()).collect();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for k in 0..n {
        let pivot = (k..n)
            .max_by(|&i, &j| m[i * n + k].abs().partial_cmp(&m[j * n + k].abs()).unwrap())
            .unwrap();
        if m[pivot * n + k] == 0.0 {
            return Err(Error::Singular { cond: f64::INFINITY });
        }
        if pivot != k {
            for c in 0..n {
                m.swap(k * n + c, pivot * n + c);
                inv.swap(k * n + c, pivot * n + c);
            }
        }
        let d = m[k * n + k];
        for c in 0..n {
            m[k * n + c] /= d;
            inv[k * n + c] /= d;
        }
        for i in 0..n {
            if i == k {
                continue;
            }
            let f = m[i * n + k];
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                m[i * n + c] -= f * m[k * n + c];
                inv[i * n + c] -= f * inv[k * n + c];
            }
        }
    }
    let inv = Array::from_vec(&[n, n], inv.into_iter().map(F::c).collect())?;
    let cond = norm1(a) * norm1(&inv);
    if !cond.is_finite() || cond > max_cond {
        return Err(Error::Singular { cond });
    }
    Ok(inv)
}

/// Orthonormalizes the columns of `a` (modified Gram–Schmidt).
pub fn orthonormalize<F: Real>(a: &Array<F>) -> Array<F> {
    let n = a.rows();
    let mut cols: Vec<Vec<f64>> = (0..a.cols())
        .map(|c| (0..n).map(|r| a.get(r, c).f64()).collect())
        .collect();
    for k in 0..cols.len() {
        for j in 0..k {
            let dot: f64 = cols[k].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
            let prev = cols[j].clone();
            for (x, y) in cols[k].iter_mut().zip(prev) {
                *x -= dot * y;
            }
        }
        let norm = cols[k].iter().map(|x| x * x).sum::<f64>().sqrt();
        cols[k].iter_mut().for_each(|x| *x /= norm);
    }
    Array::from_fn(n, a.cols(), |r, c| F::c(cols[c][r]))
}
