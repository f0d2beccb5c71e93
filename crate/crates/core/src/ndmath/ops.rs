//! Array kernels shared by the tape and by gradient-free code paths.

use super::array::{Array, Real};
use crate::error::{Error, Result};

/// Frame padding rule for [`conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Symmetric zero padding; output frame `t` is centred on input frame `t`.
    Same,
    /// Left-only zero padding; output frame `t` sees input frames `<= t`.
    Causal,
}

/// Geometry of a 1-D convolution, validated against concrete shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub channels_in: usize,
    pub channels_out: usize,
    pub width: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl ConvSpec {
    /// Infers the geometry from an input `[C_in × T]` and a kernel laid out as
    /// `[C_out × (C_in / groups) · width]`.
    pub fn infer(
        input: &[usize],
        kernel: &[usize],
        dilation: usize,
        groups: usize,
        padding: Padding,
    ) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "conv1d",
            left: input.to_vec(),
            right: kernel.to_vec(),
        };
        if input.len() != 2 || kernel.len() != 2 {
            return Err(mismatch());
        }
        if dilation == 0 || groups == 0 {
            return Err(Error::invalid("conv1d", "dilation and groups must be positive"));
        }
        let (cin, cout) = (input[0], kernel[0]);
        if cin % groups != 0 || cout % groups != 0 {
            return Err(mismatch());
        }
        let cin_g = cin / groups;
        if cin_g == 0 || kernel[1] % cin_g != 0 || kernel[1] == 0 {
            return Err(mismatch());
        }
        let width = kernel[1] / cin_g;
        if padding == Padding::Same && width % 2 == 0 {
            return Err(Error::invalid(
                "conv1d",
                format!("same padding needs an odd kernel width, got {width}"),
            ));
        }
        Ok(Self {
            channels_in: cin,
            channels_out: cout,
            width,
            dilation,
            groups,
            padding,
        })
    }

    fn left_pad(&self) -> isize {
        let span = (self.dilation * (self.width - 1)) as isize;
        match self.padding {
            Padding::Same => span / 2,
            Padding::Causal => span,
        }
    }

    /// Visits every `(out_channel, in_channel, tap, shift)` combination where
    /// `out[o][t] += w[o][tap_index] * x[ci][t + shift]`.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, isize)) {
        let cin_g = self.channels_in / self.groups;
        let cout_g = self.channels_out / self.groups;
        let pad = self.left_pad();
        for o in 0..self.channels_out {
            let g = o / cout_g;
            for ci in 0..cin_g {
                for j in 0..self.width {
                    let shift = (j * self.dilation) as isize - pad;
                    f(o, g * cin_g + ci, ci * self.width + j, shift);
                }
            }
        }
    }
}

fn valid_range(frames: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (frames as isize - shift).clamp(0, frames as isize) as usize;
    (lo.min(hi), hi)
}

/// 1-D convolution over frames. `kernel` is `[C_out × (C_in/groups)·width]`.
pub fn conv1d<F: Real>(
    input: &Array<F>,
    kernel: &Array<F>,
    dilation: usize,
    groups: usize,
    padding: Padding,
) -> Result<Array<F>> {
    let spec = ConvSpec::infer(input.shape(), kernel.shape(), dilation, groups, padding)?;
    Ok(conv1d_with(&spec, input, kernel))
}

/// Unrolled input `[C_in·width × T]` with `col[ci·width + j][t] = x[ci][t + shift_j]`.
fn im2col<F: Real>(spec: &ConvSpec, input: &Array<F>) -> Array<F> {
    let frames = input.cols();
    let w = spec.width;
    let pad = spec.left_pad();
    let mut col = Array::zeros(&[spec.channels_in * w, frames]);
    let cd = col.data_mut();
    for ci in 0..spec.channels_in {
        let irow = input.row_slice(ci);
        for j in 0..w {
            let shift = (j * spec.dilation) as isize - pad;
            let (lo, hi) = valid_range(frames, shift);
            let r = ci * w + j;
            let dst = &mut cd[r * frames..(r + 1) * frames];
            for t in lo..hi {
                dst[t] = irow[(t as isize + shift) as usize];
            }
        }
    }
    col
}

fn col2im<F: Real>(spec: &ConvSpec, col: &Array<F>) -> Array<F> {
    let frames = col.cols();
    let w = spec.width;
    let pad = spec.left_pad();
    let mut x = Array::zeros(&[spec.channels_in, frames]);
    for ci in 0..spec.channels_in {
        for j in 0..w {
            let shift = (j * spec.dilation) as isize - pad;
            let (lo, hi) = valid_range(frames, shift);
            let src = col.row_slice(ci * w + j);
            let xrow = x.row_slice_mut(ci);
            for t in lo..hi {
                xrow[(t as isize + shift) as usize] += src[t];
            }
        }
    }
    x
}

pub(crate) fn conv1d_with<F: Real>(spec: &ConvSpec, input: &Array<F>, kernel: &Array<F>) -> Array<F> {
    if spec.groups == 1 {
        if spec.width == 1 {
            return gemm(View::plain(kernel), View::plain(input));
        }
        return gemm(View::plain(kernel), View::plain(&im2col(spec, input)));
    }
    let frames = input.cols();
    let mut out = Array::zeros(&[spec.channels_out, frames]);
    let kcols = kernel.cols();
    let (kd, xd) = (kernel.data(), input.data());
    let od = out.data_mut();
    spec.for_each_tap(|o, ci, tap, shift| {
        let w = kd[o * kcols + tap];
        if w == F::zero() {
            return;
        }
        let (lo, hi) = valid_range(frames, shift);
        let orow = &mut od[o * frames..(o + 1) * frames];
        let irow = &xd[ci * frames..(ci + 1) * frames];
        for t in lo..hi {
            orow[t] += w * irow[(t as isize + shift) as usize];
        }
    });
    out
}

pub(crate) fn conv1d_grad_input<F: Real>(
    spec: &ConvSpec,
    grad_out: &Array<F>,
    kernel: &Array<F>,
) -> Array<F> {
    if spec.groups == 1 {
        let gcol = matmul_tn(kernel, grad_out);
        if spec.width == 1 {
            return gcol;
        }
        return col2im(spec, &gcol);
    }
    let frames = grad_out.cols();
    let mut gx = Array::zeros(&[spec.channels_in, frames]);
    let kcols = kernel.cols();
    let (kd, gd) = (kernel.data(), grad_out.data());
    let xd = gx.data_mut();
    spec.for_each_tap(|o, ci, tap, shift| {
        let w = kd[o * kcols + tap];
        let (lo, hi) = valid_range(frames, shift);
        let grow = &gd[o * frames..(o + 1) * frames];
        let xrow = &mut xd[ci * frames..(ci + 1) * frames];
        for t in lo..hi {
            xrow[(t as isize + shift) as usize] += w * grow[t];
        }
    });
    gx
}

pub(crate) fn conv1d_grad_kernel<F: Real>(
    spec: &ConvSpec,
    grad_out: &Array<F>,
    input: &Array<F>,
    kernel_shape: &[usize],
) -> Array<F> {
    if spec.groups == 1 {
        if spec.width == 1 {
            return matmul_nt(grad_out, input);
        }
        return matmul_nt(grad_out, &im2col(spec, input));
    }
    let frames = grad_out.cols();
    let mut gk = Array::zeros(kernel_shape);
    let kcols = kernel_shape[1];
    let (gd, xd) = (grad_out.data(), input.data());
    let kd = gk.data_mut();
    spec.for_each_tap(|o, ci, tap, shift| {
        let (lo, hi) = valid_range(frames, shift);
        let grow = &gd[o * frames..(o + 1) * frames];
        let xrow = &xd[ci * frames..(ci + 1) * frames];
        let mut acc = F::zero();
        for t in lo..hi {
            acc += grow[t] * xrow[(t as isize + shift) as usize];
        }
        kd[o * kcols + tap] += acc;
    });
    gk
}

/// `[m × k]` operand view over row-major storage, optionally transposed.
#[derive(Clone, Copy)]
struct View<'a, F> {
    data: &'a [F],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a, F: Real> View<'a, F> {
    fn plain(a: &'a Array<F>) -> Self {
        Self {
            data: a.data(),
            rows: a.rows(),
            cols: a.cols(),
            rs: a.cols() as isize,
            cs: 1,
        }
    }

    fn transposed(a: &'a Array<F>) -> Self {
        Self {
            data: a.data(),
            rows: a.cols(),
            cols: a.rows(),
            rs: 1,
            cs: a.cols() as isize,
        }
    }
}

fn gemm<F: Real>(a: View<F>, b: View<F>) -> Array<F> {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Array::zeros(&[m, n]);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: the views cover exactly the row-major buffers they were built
    // from, and `out` is a fresh `[m × n]` buffer.
    unsafe {
        F::gemm_acc(
            m,
            k,
            n,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            out.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Dense product `[m × k] · [k × n]`.
pub fn matmul<F: Real>(a: &Array<F>, b: &Array<F>) -> Result<Array<F>> {
    if !a.is_matrix() || !b.is_matrix() || a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(gemm(View::plain(a), View::plain(b)))
}

/// `a · bᵀ` without materializing the transpose.
pub(crate) fn matmul_nt<F: Real>(a: &Array<F>, b: &Array<F>) -> Array<F> {
    gemm(View::plain(a), View::transposed(b))
}

/// `aᵀ · b` without materializing the transpose.
pub(crate) fn matmul_tn<F: Real>(a: &Array<F>, b: &Array<F>) -> Array<F> {
    gemm(View::transposed(a), View::plain(b))
}
