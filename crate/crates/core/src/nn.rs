//! Small dense building blocks shared by the router, the unit and the decoder:
//! per-pixel linear maps (GEMM over channel-major grids or token-major rows),
//! 3×3 convolutions, pointwise activations, and the parameter visitor used by
//! weight serialization.

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::FeatureMap;
use crate::rng::Prng;

/// Named access to every parameter tensor of a weight struct, in a fixed order.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform draw in `[-bound, bound]`, rounded to single precision so weights
/// survive the f32 weight file bit-exactly.
pub(crate) fn uniform_f32(rng: &mut Prng, bound: f64) -> f64 {
    (rng.gen_range(-bound..=bound) as f32) as f64
}

fn uniform_vec(rng: &mut Prng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..len).map(|_| uniform_f32(rng, bound)).collect()
}

/// Affine map applied independently at every pixel (or token).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Weights uniform in `±1/sqrt(in_dim)`, zero bias.
    pub fn uniform(in_dim: usize, out_dim: usize, rng: &mut Prng) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: uniform_vec(rng, in_dim * out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weight[i * dim + i] = 1.0;
        }
        l
    }

    /// Per-pixel map over a channel-major grid: `C_out × P = W · X + b`.
    pub fn apply_channels(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels() != self.in_dim {
            return Err(Error::Shape(format!(
                "linear map expects {} channels, got {}",
                self.in_dim,
                x.channels()
            )));
        }
        let p = x.plane_len();
        let mut out = vec![0.0; self.out_dim * p];
        gemm(
            self.out_dim,
            self.in_dim,
            p,
            (&self.weight, self.in_dim as isize, 1),
            (x.data(), p as isize, 1),
            (&mut out, p as isize, 1),
        );
        for (o, row) in out.chunks_exact_mut(p).enumerate() {
            let b = self.bias[o];
            if b != 0.0 {
                row.iter_mut().for_each(|v| *v += b);
            }
        }
        Ok(FeatureMap::from_parts_unchecked(self.out_dim, x.height(), x.width(), out))
    }

    /// Map over token-major rows: `rows` is `n × in_dim`, result is `n × out_dim`.
    pub fn apply_rows(&self, rows: &[f64]) -> Vec<f64> {
        assert_eq!(rows.len() % self.in_dim.max(1), 0, "row buffer is not a multiple of in_dim");
        let n = rows.len() / self.in_dim.max(1);
        let mut out = vec![0.0; n * self.out_dim];
        gemm(
            n,
            self.in_dim,
            self.out_dim,
            (rows, self.in_dim as isize, 1),
            (&self.weight, 1, self.in_dim as isize),
            (&mut out, self.out_dim as isize, 1),
        );
        for row in out.chunks_exact_mut(self.out_dim) {
            row.iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
        }
        out
    }
}

impl Params for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// `C = A·B` with explicit (row, column) strides; `C` is overwritten.
fn gemm(m: usize, k: usize, n: usize, a: (&[f64], isize, isize), b: (&[f64], isize, isize), c: (&mut [f64], isize, isize)) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.0.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: each operand slice covers the full extent addressed by its
    // (rows, cols, strides) triple; callers size them from the same dims.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            0.0,
            c.0.as_mut_ptr(),
            c.1,
            c.2,
        );
    }
}

/// Dense 3×3 convolution with zero padding ("same" output size).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `out_ch × in_ch × 3 × 3`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn uniform(in_ch: usize, out_ch: usize, rng: &mut Prng) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: uniform_vec(rng, out_ch * in_ch * 9, in_ch * 9),
            bias: vec![0.0; out_ch],
        }
    }

    pub fn apply(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels() != self.in_ch {
            return Err(Error::Shape(format!(
                "3x3 convolution expects {} input channels, got {}",
                self.in_ch,
                x.channels()
            )));
        }
        let (h, w) = (x.height(), x.width());
        let mut out = FeatureMap::zeros(self.out_ch, h, w);
        for o in 0..self.out_ch {
            let dst = out.channel_mut(o);
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            for c in 0..self.in_ch {
                let k = &self.weight[(o * self.in_ch + c) * 9..(o * self.in_ch + c + 1) * 9];
                accumulate_3x3(dst, x.channel(c), h, w, k);
            }
        }
        Ok(out)
    }
}

impl Params for Conv3x3 {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Channel-wise 3×3 convolution with zero padding; no channel mixing.
#[derive(Debug, Clone, PartialEq)]
pub struct Depthwise3x3 {
    pub channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Depthwise3x3 {
    pub fn zeros(channels: usize) -> Self {
        Self {
            channels,
            weight: vec![0.0; channels * 9],
            bias: vec![0.0; channels],
        }
    }

    pub fn uniform(channels: usize, rng: &mut Prng) -> Self {
        Self {
            channels,
            weight: uniform_vec(rng, channels * 9, 9),
            bias: vec![0.0; channels],
        }
    }

    pub fn apply(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels() != self.channels {
            return Err(Error::Shape(format!(
                "depthwise convolution expects {} channels, got {}",
                self.channels,
                x.channels()
            )));
        }
        let (h, w) = (x.height(), x.width());
        let mut out = FeatureMap::zeros(self.channels, h, w);
        for c in 0..self.channels {
            let dst = out.channel_mut(c);
            dst.iter_mut().for_each(|v| *v = self.bias[c]);
            accumulate_3x3(dst, x.channel(c), h, w, &self.weight[c * 9..(c + 1) * 9]);
        }
        Ok(out)
    }
}

impl Params for Depthwise3x3 {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

fn accumulate_3x3(dst: &mut [f64], src: &[f64], h: usize, w: usize, k: &[f64]) {
    for di in 0..3usize {
        for dj in 0..3usize {
            let kv = k[di * 3 + dj];
            if kv == 0.0 {
                continue;
            }
            // Output (i, j) reads input (i + di - 1, j + dj - 1).
            let i_lo = if di == 0 { 1 } else { 0 };
            let i_hi = if di == 2 { h - 1 } else { h };
            let j_lo = if dj == 0 { 1 } else { 0 };
            let j_hi = if dj == 2 { w - 1 } else { w };
            for i in i_lo..i_hi {
                let si = i + di - 1;
                let drow = &mut dst[i * w + j_lo..i * w + j_hi];
                let srow = &src[si * w + j_lo + dj - 1..si * w + j_hi + dj - 1];
                for (d, s) in drow.iter_mut().zip(srow) {
                    *d += kv * s;
                }
            }
        }
    }
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}
