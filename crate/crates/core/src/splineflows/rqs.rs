//! Monotonic rational-quadratic splines on `[−B, B]` with identity tails.

use crate::error::{Error, Result};
use crate::ndmath::{Array, Graph, Real, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplineConfig {
    pub bins: usize,
    pub bound: f64,
    pub min_width: f64,
    pub min_height: f64,
    pub min_derivative: f64,
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self {
            bins: 10,
            bound: 5.0,
            min_width: 1e-3,
            min_height: 1e-3,
            min_derivative: 1e-3,
        }
    }
}

impl SplineConfig {
    /// Raw parameters per transformed element: K widths, K heights and
    /// K − 1 interior derivatives.
    pub fn params_per_element(&self) -> usize {
        3 * self.bins - 1
    }

    /// Raw derivative value that maps to slope 1.
    pub fn unit_derivative_raw(&self) -> f64 {
        ((1.0 - self.min_derivative).exp() - 1.0).ln()
    }
}

/// Knot positions and slopes of one spline.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineParams {
    pub knots_x: Vec<f64>,
    pub knots_y: Vec<f64>,
    /// Slopes at every knot, boundary slopes equal to 1.
    pub derivatives: Vec<f64>,
    pub bound: f64,
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn knots(raw: &[f64], min: f64, bound: f64) -> Vec<f64> {
    let k = raw.len();
    let p = softmax(raw);
    let mut out = Vec::with_capacity(k + 1);
    let mut acc = 0.0;
    out.push(-bound);
    for w in p {
        acc += min + (1.0 - min * k as f64) * w;
        out.push(2.0 * bound * acc - bound);
    }
    out
}

impl SplineParams {
    /// Softmax widths and heights, softplus interior slopes.
    pub fn from_raw(cfg: &SplineConfig, widths: &[f64], heights: &[f64], derivatives: &[f64]) -> Result<Self> {
        let k = cfg.bins;
        if widths.len() != k || heights.len() != k || derivatives.len() != k - 1 {
            return Err(Error::invalid(
                "SplineParams",
                format!(
                    "expected {k}/{k}/{} raw values, got {}/{}/{}",
                    k - 1,
                    widths.len(),
                    heights.len(),
                    derivatives.len()
                ),
            ));
        }
        if widths.iter().chain(heights).chain(derivatives).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spline parameters".into()));
        }
        let mut d = Vec::with_capacity(k + 1);
        d.push(1.0);
        d.extend(derivatives.iter().map(|&r| cfg.min_derivative + softplus(r)));
        d.push(1.0);
        Ok(Self {
            knots_x: knots(widths, cfg.min_width, cfg.bound),
            knots_y: knots(heights, cfg.min_height, cfg.bound),
            derivatives: d,
            bound: cfg.bound,
        })
    }

    /// Uniform bins with unit slopes: the identity map.
    pub fn identity(cfg: &SplineConfig) -> Self {
        let k = cfg.bins;
        Self::from_raw(cfg, &vec![0.0; k], &vec![0.0; k], &vec![cfg.unit_derivative_raw(); k - 1])
            .expect("finite")
    }

    pub fn bins(&self) -> usize {
        self.knots_x.len() - 1
    }

    fn bin(knots: &[f64], v: f64) -> usize {
        let k = knots.len() - 1;
        let count = knots
            .iter()
            .enumerate()
            .filter(|&(i, &kn)| v >= if i == k { kn + 1e-6 } else { kn })
            .count();
        count.saturating_sub(1).min(k - 1)
    }

    fn inside(&self, v: f64) -> bool {
        v >= -self.bound && v <= self.bound
    }

    /// Value and log-slope at `x`.
    pub fn forward(&self, x: f64) -> (f64, f64) {
        if !self.inside(x) {
            return (x, 0.0);
        }
        let b = Self::bin(&self.knots_x, x);
        let (xk, w) = (self.knots_x[b], self.knots_x[b + 1] - self.knots_x[b]);
        let (yk, h) = (self.knots_y[b], self.knots_y[b + 1] - self.knots_y[b]);
        let (d0, d1) = (self.derivatives[b], self.derivatives[b + 1]);
        let s = h / w;
        let th = (x - xk) / w;
        let t1m = th * (1.0 - th);
        let denom = s + (d0 + d1 - 2.0 * s) * t1m;
        let y = yk + h * (s * th * th + d0 * t1m) / denom;
        let dnum = s * s * (d1 * th * th + 2.0 * s * t1m + d0 * (1.0 - th).powi(2));
        (y, dnum.ln() - 2.0 * denom.ln())
    }

    /// Exact inverse by quadratic-root selection; the log-slope is that of
    /// the inverse map.
    pub fn inverse(&self, y: f64) -> (f64, f64) {
        if !self.inside(y) {
            return (y, 0.0);
        }
        let b = Self::bin(&self.knots_y, y);
        let (xk, w) = (self.knots_x[b], self.knots_x[b + 1] - self.knots_x[b]);
        let (yk, h) = (self.knots_y[b], self.knots_y[b + 1] - self.knots_y[b]);
        let (d0, d1) = (self.derivatives[b], self.derivatives[b + 1]);
        let s = h / w;
        let dy = y - yk;
        let a = h * (s - d0) + dy * (d1 + d0 - 2.0 * s);
        let bq = h * d0 - dy * (d1 + d0 - 2.0 * s);
        let c = -s * dy;
        let disc = (bq * bq - 4.0 * a * c).max(0.0);
        let th = 2.0 * c / (-bq - disc.sqrt());
        let x = th * w + xk;
        let t1m = th * (1.0 - th);
        let denom = s + (d0 + d1 - 2.0 * s) * t1m;
        let dnum = s * s * (d1 * th * th + 2.0 * s * t1m + d0 * (1.0 - th).powi(2));
        (x, -(dnum.ln() - 2.0 * denom.ln()))
    }
}

pub fn rqs_forward(x: f64, params: &SplineParams) -> (f64, f64) {
    params.forward(x)
}

pub fn rqs_inverse(y: f64, params: &SplineParams) -> (f64, f64) {
    params.inverse(y)
}

/// Splits a `[n·(3K−1) × T]` raw parameter block into per-element splines,
/// element order matching a row-major `[n × T]` input.
pub fn params_from_block<F: Real>(cfg: &SplineConfig, raw: &Array<F>, n: usize) -> Result<Vec<SplineParams>> {
    let p = cfg.params_per_element();
    let k = cfg.bins;
    let t = raw.cols();
    if raw.rows() != n * p {
        return Err(Error::ShapeMismatch {
            op: "spline parameters",
            left: vec![n * p, t],
            right: raw.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(n * t);
    for c in 0..n {
        for col in 0..t {
            let v: Vec<f64> = (0..p).map(|r| raw.get(c * p + r, col).f64()).collect();
            out.push(SplineParams::from_raw(cfg, &v[..k], &v[k..2 * k], &v[2 * k..])?);
        }
    }
    Ok(out)
}

/// Differentiable spline forward for `x: [n × T]` with raw parameters
/// `[n·(3K−1) × T]`. Returns `y` and the elementwise log-slopes, both
/// `[n × T]`. Bin lookup is a hard, non-differentiated decision.
pub fn rqs_graph<F: Real>(g: &mut Graph<F>, cfg: &SplineConfig, x: Var, raw: Var) -> Result<(Var, Var)> {
    let (n, t) = (g.rows(x), g.cols(x));
    let p = cfg.params_per_element();
    let k = cfg.bins;
    if g.shape(raw) != [n * p, t] {
        return Err(Error::ShapeMismatch {
            op: "rqs",
            left: vec![n * p, t],
            right: g.shape(raw).to_vec(),
        });
    }
    let cols = n * t;
    // rearrange to one column per element
    let mut idx = Vec::with_capacity(p * cols);
    for r in 0..p {
        for c in 0..n {
            for col in 0..t {
                idx.push((c * p + r) * t + col);
            }
        }
    }
    let params = g.take(raw, idx, &[p, cols]);
    let xf = g.take(x, (0..cols).collect(), &[1, cols]);

    let knots = |g: &mut Graph<F>, raw: Var, min: f64| {
        let sm = g.softmax_rows(raw);
        let scaled = g.scale(sm, 1.0 - min * k as f64);
        let widths = g.add_scalar(scaled, min);
        let tri = g.constant(Array::from_fn(k + 1, k, |i, j| if j < i { F::one() } else { F::zero() }));
        let cum = g.matmul(tri, widths);
        let spread = g.scale(cum, 2.0 * cfg.bound);
        g.add_scalar(spread, -cfg.bound)
    };
    let uw = g.slice_rows(params, 0, k);
    let uh = g.slice_rows(params, k, 2 * k);
    let ud = g.slice_rows(params, 2 * k, p);
    let kx = knots(g, uw, cfg.min_width);
    let ky = knots(g, uh, cfg.min_height);
    let sp = g.softplus(ud);
    let dint = g.add_scalar(sp, cfg.min_derivative);
    let ones = g.constant(Array::ones(&[1, cols]));
    let derivs = g.concat_rows(&[ones, dint, ones]);

    let xv = g.value(xf).data().to_vec();
    let kxv = g.value(kx).clone();
    let inside: Vec<bool> = xv.iter().map(|v| v.f64().abs() <= cfg.bound).collect();
    let bins: Vec<usize> = (0..cols)
        .map(|c| {
            // outside points are evaluated at 0 and masked away
            let v = if inside[c] { xv[c].f64() } else { 0.0 };
            let column: Vec<f64> = (0..=k).map(|r| kxv.get(r, c).f64()).collect();
            SplineParams::bin(&column, v)
        })
        .collect();
    let pick = |g: &mut Graph<F>, a: Var, offset: usize| {
        let ids = bins.iter().enumerate().map(|(c, &b)| (b + offset) * cols + c).collect();
        g.take(a, ids, &[1, cols])
    };
    let xk = pick(g, kx, 0);
    let xk1 = pick(g, kx, 1);
    let yk = pick(g, ky, 0);
    let yk1 = pick(g, ky, 1);
    let d0 = pick(g, derivs, 0);
    let d1 = pick(g, derivs, 1);
    let w = g.sub(xk1, xk);
    let h = g.sub(yk1, yk);
    let s = g.div(h, w);

    let mask = g.constant(Array::from_fn(1, cols, |_, c| if inside[c] { F::one() } else { F::zero() }));
    let outside = g.constant(Array::from_fn(1, cols, |_, c| if inside[c] { F::zero() } else { F::one() }));
    let xc = g.mul(xf, mask);
    let dx = g.sub(xc, xk);
    let th = g.div(dx, w);
    let one_minus = {
        let n = g.neg(th);
        g.add_scalar(n, 1.0)
    };
    let t1m = g.mul(th, one_minus);
    let th2 = g.square(th);
    // numerator h (s θ² + d₀ θ(1−θ)), denominator s + (d₀ + d₁ − 2s) θ(1−θ)
    let a = g.mul(s, th2);
    let b = g.mul(d0, t1m);
    let ab = g.add(a, b);
    let numer = g.mul(h, ab);
    let dsum = g.add(d0, d1);
    let s2 = g.scale(s, 2.0);
    let coef = g.sub(dsum, s2);
    let ct = g.mul(coef, t1m);
    let denom = g.add(s, ct);
    let frac = g.div(numer, denom);
    let y_in = g.add(yk, frac);
    // slope numerator s² (d₁ θ² + 2 s θ(1−θ) + d₀ (1−θ)²)
    let e1 = g.mul(d1, th2);
    let e2 = g.mul(s2, t1m);
    let om2 = g.square(one_minus);
    let e3 = g.mul(d0, om2);
    let e12 = g.add(e1, e2);
    let e = g.add(e12, e3);
    let ss = g.square(s);
    let dnum = g.mul(ss, e);
    let ln_num = g.log(dnum);
    let ln_den = g.log(denom);
    let ln_den2 = g.scale(ln_den, 2.0);
    let ld_in = g.sub(ln_num, ln_den2);

    let ym = g.mul(y_in, mask);
    let xo = g.mul(xf, outside);
    let yf = g.add(ym, xo);
    let ldf = g.mul(ld_in, mask);
    let y = g.take(yf, (0..cols).collect(), &[n, t]);
    let ld = g.take(ldf, (0..cols).collect(), &[n, t]);
    Ok((y, ld))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spline() {
        let cfg = SplineConfig::default();
        let p = SplineParams::identity(&cfg);
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            let (y, ld) = p.forward(x);
            assert!((y - x).abs() < 1e-12 && ld.abs() < 1e-12, "{x}: {y} {ld}");
            let (xi, _) = p.inverse(x);
            assert!((xi - x).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_tails() {
        let cfg = SplineConfig::default();
        let p = SplineParams::from_raw(&cfg, &[0.3; 10], &[-0.2; 10], &[0.5; 9]).unwrap();
        assert_eq!(p.forward(6.0), (6.0, 0.0));
        assert_eq!(p.forward(-7.5), (-7.5, 0.0));
        assert_eq!(p.inverse(6.0), (6.0, 0.0));
    }

    #[test]
    fn widths_sum_to_interval() {
        let cfg = SplineConfig::default();
        let raw: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let p = SplineParams::from_raw(&cfg, &raw, &raw, &[0.0; 9]).unwrap();
        assert!((p.knots_x[10] - 5.0).abs() < 1e-12);
        assert_eq!(p.knots_x[0], -5.0);
        assert!(p.knots_x.windows(2).all(|w| w[1] - w[0] >= 2.0 * 5.0 * 1e-3 - 1e-12));
    }

    #[test]
    fn non_finite_rejected() {
        let cfg = SplineConfig::default();
        assert!(SplineParams::from_raw(&cfg, &[f64::NAN; 10], &[0.0; 10], &[0.0; 9]).is_err());
    }

    #[test]
    fn graph_matches_numeric() {
        let cfg = SplineConfig::default();
        let store = crate::ndmath::ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let t = 7;
        let raw = Array::from_fn(2 * 29, t, |r, c| ((r * 7 + c * 3) as f64 * 0.37).sin() * 2.0);
        let xv = Array::from_fn(2, t, |r, c| -6.0 + (r * t + c) as f64 * 0.9);
        let x = g.constant(xv.clone());
        let rv = g.constant(raw.clone());
        let (y, ld) = rqs_graph(&mut g, &cfg, x, rv).unwrap();
        let splines = params_from_block(&cfg, &raw, 2).unwrap();
        for (i, sp) in splines.iter().enumerate() {
            let (ye, le) = sp.forward(xv.data()[i]);
            assert!((g.value(y).data()[i] - ye).abs() < 1e-12);
            assert!((g.value(ld).data()[i] - le).abs() < 1e-12);
        }
    }
}
