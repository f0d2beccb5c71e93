use crate::error::{Error, Result};
use crate::ndmath::{Array, Graph, Real, Var};

/// Flat source indices for `squeeze`: `out[c·r + k][j] = x[c][j·r + k]`.
/// Trailing frames beyond `r·⌊T/r⌋` are dropped.
fn squeeze_indices(channels: usize, frames: usize, r: usize) -> (Vec<usize>, [usize; 2]) {
    let t = frames / r;
    let mut idx = Vec::with_capacity(channels * r * t);
    for c in 0..channels {
        for k in 0..r {
            for j in 0..t {
                idx.push(c * frames + j * r + k);
            }
        }
    }
    (idx, [channels * r, t])
}

fn unsqueeze_indices(channels: usize, frames: usize, r: usize) -> (Vec<usize>, [usize; 2]) {
    let c = channels / r;
    let t = frames * r;
    let mut idx = Vec::with_capacity(channels * frames);
    for ch in 0..c {
        for s in 0..t {
            let (j, k) = (s / r, s % r);
            idx.push((ch * r + k) * frames + j);
        }
    }
    (idx, [c, t])
}

fn check_ratio(r: usize) -> Result<()> {
    if r < 1 {
        return Err(Error::invalid("squeeze", "ratio must be at least 1"));
    }
    Ok(())
}

/// Folds frames into channels: `[C × T] → [C·r × ⌊T/r⌋]`.
pub fn squeeze<F: Real>(g: &mut Graph<F>, x: Var, r: usize) -> Result<Var> {
    check_ratio(r)?;
    let (idx, shape) = squeeze_indices(g.rows(x), g.cols(x), r);
    Ok(g.take(x, idx, &shape))
}

/// Inverse of [`squeeze`]: `[C·r × T] → [C × T·r]`.
pub fn unsqueeze<F: Real>(g: &mut Graph<F>, x: Var, r: usize) -> Result<Var> {
    check_ratio(r)?;
    if g.rows(x) % r != 0 {
        return Err(Error::invalid(
            "unsqueeze",
            format!("{} channels not divisible by ratio {r}", g.rows(x)),
        ));
    }
    let (idx, shape) = unsqueeze_indices(g.rows(x), g.cols(x), r);
    Ok(g.take(x, idx, &shape))
}

pub fn squeeze_array<F: Real>(x: &Array<F>, r: usize) -> Result<Array<F>> {
    check_ratio(r)?;
    let (idx, shape) = squeeze_indices(x.rows(), x.cols(), r);
    Array::from_vec(&shape, idx.iter().map(|&i| x.data()[i]).collect())
}

pub fn unsqueeze_array<F: Real>(x: &Array<F>, r: usize) -> Result<Array<F>> {
    check_ratio(r)?;
    if x.rows() % r != 0 {
        return Err(Error::invalid("unsqueeze", format!("{} channels not divisible by ratio {r}", x.rows())));
    }
    let (idx, shape) = unsqueeze_indices(x.rows(), x.cols(), r);
    Array::from_vec(&shape, idx.iter().map(|&i| x.data()[i]).collect())
}
