//! Complex image / k-space grids, real feature maps, and the centered
//! orthonormal 2-D Fourier transform used everywhere else in the crate.
//!
//! Convention: the zero-frequency bin sits at `(H/2, W/2)` (integer division),
//! and both directions are scaled by `1/sqrt(H*W)` so the transform is unitary.
//! In closed form, for a grid of size `N` along one axis with center `c = N/2`,
//!
//! ```text
//! X[k] = 1/sqrt(N) * sum_n x[n] * exp(-2*pi*i * (k - c) * (n - c) / N)
//! ```
//!
//! The fast path wraps `rustfft` with index rotations on both sides; the
//! direct-summation [`dft2c_reference`] evaluates the formula above literally
//! and is kept as an oracle.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Largest per-axis size accepted by [`dft2c_reference`].
pub const DFT_ORACLE_MAX: usize = 64;

/// H×W complex grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Shape(format!("complex field must be at least 2x2, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "complex field {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::DataIntegrity(format!("non-finite value at flat index {idx}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![Complex64::new(0.0, 0.0); height * width])
    }

    pub fn from_real(height: usize, width: usize, re: &[f64]) -> Result<Self> {
        Self::new(height, width, re.iter().map(|&r| Complex64::new(r, 0.0)).collect())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self::new(height, width, data)
    }

    /// Internal constructor for values produced by operations on valid fields.
    pub(crate) fn from_parts_unchecked(height: usize, width: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.width + j]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn max_abs_diff(&self, other: &ComplexField) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn check_same_dims(&self, other: &ComplexField, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Elementwise product `self ⊙ other`.
    pub fn hadamard(&self, other: &ComplexField) -> Result<ComplexField> {
        self.check_same_dims(other, "elementwise product")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Self::from_parts_unchecked(self.height, self.width, data))
    }

    /// Elementwise `conj(self) ⊙ other`.
    pub fn conj_hadamard(&self, other: &ComplexField) -> Result<ComplexField> {
        self.check_same_dims(other, "conjugate elementwise product")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).collect();
        Ok(Self::from_parts_unchecked(self.height, self.width, data))
    }

    pub fn add(&self, other: &ComplexField) -> Result<ComplexField> {
        self.check_same_dims(other, "addition")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self::from_parts_unchecked(self.height, self.width, data))
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Narrow to single precision (for the on-disk formats).
    pub fn to_f32(&self) -> Vec<Complex32> {
        self.data.iter().map(|z| Complex32::new(z.re as f32, z.im as f32)).collect()
    }

    pub fn from_f32(height: usize, width: usize, data: &[Complex32]) -> Result<Self> {
        Self::new(
            height,
            width,
            data.iter().map(|z| Complex64::new(z.re as f64, z.im as f64)).collect(),
        )
    }
}

/// C×H×W real grid, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::DataIntegrity(format!("non-finite feature value at flat index {idx}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub(crate) fn from_parts_unchecked(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane_len();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.plane_len();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Channels `[start, end)` as a new map.
    pub fn slice_channels(&self, start: usize, end: usize) -> FeatureMap {
        let p = self.plane_len();
        Self::from_parts_unchecked(end - start, self.height, self.width, self.data[start * p..end * p].to_vec())
    }

    /// Channel-wise concatenation `[self; other]`.
    pub fn concat(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Shape(format!(
                "cannot concatenate {}x{} with {}x{} feature maps",
                self.height, self.width, other.height, other.width
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self::from_parts_unchecked(
            self.channels + other.channels,
            self.height,
            self.width,
            data,
        ))
    }

    pub fn sub(&self, other: &FeatureMap) -> Result<FeatureMap> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &FeatureMap, f: impl Fn(f64, f64) -> f64) -> Result<FeatureMap> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "feature maps {}x{}x{} and {}x{}x{} differ",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_parts_unchecked(self.channels, self.height, self.width, data))
    }

    /// Stack the real and imaginary parts of each field as consecutive channels.
    pub fn from_complex_channels(fields: &[ComplexField]) -> Result<FeatureMap> {
        let first = fields.first().ok_or_else(|| Error::Shape("no complex fields to stack".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(2 * fields.len() * h * w);
        for f in fields {
            first.check_same_dims(f, "channel stacking")?;
            data.extend(f.data().iter().map(|z| z.re));
            data.extend(f.data().iter().map(|z| z.im));
        }
        Ok(Self::from_parts_unchecked(2 * fields.len(), h, w, data))
    }

    /// Inverse of [`FeatureMap::from_complex_channels`].
    pub fn to_complex_channels(&self) -> Result<Vec<ComplexField>> {
        if !self.channels.is_multiple_of(2) || self.channels == 0 {
            return Err(Error::Shape(format!(
                "need an even, nonzero channel count to form complex fields, got {}",
                self.channels
            )));
        }
        (0..self.channels / 2)
            .map(|c| {
                let re = self.channel(2 * c);
                let im = self.channel(2 * c + 1);
                ComplexField::new(
                    self.height,
                    self.width,
                    re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect(),
                )
            })
            .collect()
    }
}

/// Reusable row/column plans for a fixed grid size.
pub struct Fft2Plan {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2Plan {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Centered orthonormal forward transform of a row-major buffer, in place.
    pub fn forward_inplace(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    pub fn inverse_inplace(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        assert_eq!(buf.len(), h * w, "buffer does not match plan dimensions");
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let (ch, cw) = (h / 2, w / 2);

        // Move the center sample to index 0 on each axis, transform, move back.
        let mut rotated = vec![Complex64::new(0.0, 0.0); h * w];
        for i in 0..h {
            let si = (i + ch) % h;
            for j in 0..w {
                rotated[i * w + j] = buf[si * w + (j + cw) % w];
            }
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())];
        for r in rotated.chunks_exact_mut(w) {
            row.process_with_scratch(r, &mut scratch);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for j in 0..w {
            for i in 0..h {
                column[i] = rotated[i * w + j];
            }
            col.process_with_scratch(&mut column, &mut scratch);
            for i in 0..h {
                rotated[i * w + j] = column[i];
            }
        }
        let scale = 1.0 / ((h * w) as f64).sqrt();
        for k in 0..h {
            let sk = (k + h - ch) % h;
            for l in 0..w {
                buf[k * w + l] = rotated[sk * w + (l + w - cw) % w] * scale;
            }
        }
    }
}

/// Centered orthonormal 2-D DFT.
pub fn fft2c(field: &ComplexField) -> Result<ComplexField> {
    validate_finite(field)?;
    let plan = Fft2Plan::new(field.height, field.width);
    let mut data = field.data.clone();
    plan.forward_inplace(&mut data);
    Ok(ComplexField::from_parts_unchecked(field.height, field.width, data))
}

/// Exact inverse of [`fft2c`].
pub fn ifft2c(kspace: &ComplexField) -> Result<ComplexField> {
    validate_finite(kspace)?;
    let plan = Fft2Plan::new(kspace.height, kspace.width);
    let mut data = kspace.data.clone();
    plan.inverse_inplace(&mut data);
    Ok(ComplexField::from_parts_unchecked(kspace.height, kspace.width, data))
}

/// Single-precision entry point; arithmetic is carried out in double precision.
pub fn fft2c_f32(height: usize, width: usize, data: &[Complex32]) -> Result<Vec<Complex32>> {
    let f = ComplexField::from_f32(height, width, data)?;
    Ok(fft2c(&f)?.to_f32())
}

pub fn ifft2c_f32(height: usize, width: usize, data: &[Complex32]) -> Result<Vec<Complex32>> {
    let f = ComplexField::from_f32(height, width, data)?;
    Ok(ifft2c(&f)?.to_f32())
}

/// Direct-summation evaluation of the centered orthonormal DFT. Separable,
/// O(H·W·(H+W)); restricted to grids of at most [`DFT_ORACLE_MAX`] per axis.
pub fn dft2c_reference(field: &ComplexField) -> Result<ComplexField> {
    let (h, w) = field.dims();
    if h > DFT_ORACLE_MAX || w > DFT_ORACLE_MAX {
        return Err(Error::Capability(format!(
            "reference DFT limited to {DFT_ORACLE_MAX}x{DFT_ORACLE_MAX}, got {h}x{w}"
        )));
    }
    validate_finite(field)?;
    let twiddles = |n: usize| -> Vec<Complex64> {
        let c = (n / 2) as i64;
        let mut t = Vec::with_capacity(n * n);
        for k in 0..n as i64 {
            for m in 0..n as i64 {
                // Reduce the phase index exactly before converting to an angle.
                let p = ((k - c) * (m - c)).rem_euclid(n as i64);
                let theta = -2.0 * PI * p as f64 / n as f64;
                t.push(Complex64::new(theta.cos(), theta.sin()));
            }
        }
        t
    };
    let th = twiddles(h);
    let tw = twiddles(w);

    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for l in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..w {
                acc += field.data[i * w + j] * tw[l * w + j];
            }
            rows[i * w + l] = acc;
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for k in 0..h {
        for l in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..h {
                acc += rows[i * w + l] * th[k * h + i];
            }
            out[k * w + l] = acc * scale;
        }
    }
    Ok(ComplexField::from_parts_unchecked(h, w, out))
}

/// `Σ conj(a)·b`.
pub fn inner_product(a: &ComplexField, b: &ComplexField) -> Result<Complex64> {
    a.check_same_dims(b, "inner product")?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).sum())
}

fn validate_finite(field: &ComplexField) -> Result<()> {
    match field.data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
        Some(idx) => Err(Error::DataIntegrity(format!("non-finite value at flat index {idx}"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_field(h: usize, w: usize, seed: u64) -> ComplexField {
        let mut rng = seeded(seed);
        ComplexField::from_fn(h, w, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn constant_field_maps_to_center_bin() {
        let x = ComplexField::from_real(4, 4, &[1.0; 16]).unwrap();
        let k = fft2c(&x).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if (i, j) == (2, 2) { 4.0 } else { 0.0 };
                assert!((k.get(i, j) - Complex64::new(expect, 0.0)).norm() < 1e-12);
            }
        }
        let back = ifft2c(&k).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn center_impulse_inverts_to_constant() {
        let mut d = vec![Complex64::new(0.0, 0.0); 16];
        d[2 * 4 + 2] = Complex64::new(4.0, 0.0);
        let y = ComplexField::new(4, 4, d).unwrap();
        let x = ifft2c(&y).unwrap();
        for z in x.data() {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_field_stays_zero() {
        let z = ComplexField::zeros(6, 8).unwrap();
        assert_eq!(ifft2c(&z).unwrap(), z);
        assert_eq!(fft2c(&z).unwrap(), z);
    }

    #[test]
    fn roundtrip_and_parseval() {
        for &(h, w) in &[(4, 4), (8, 16), (6, 10), (64, 64), (256, 256)] {
            let x = random_field(h, w, (h * 1000 + w) as u64);
            let k = fft2c(&x).unwrap();
            assert!(ifft2c(&k).unwrap().max_abs_diff(&x) < 1e-12);
            assert!(fft2c(&ifft2c(&x).unwrap()).unwrap().max_abs_diff(&x) < 1e-12);
            let ratio = k.norm() / x.norm();
            assert!((ratio - 1.0).abs() <= 1e-12, "{h}x{w}: {ratio}");
        }
    }

    #[test]
    fn single_precision_roundtrip() {
        let x = random_field(32, 32, 7).to_f32();
        let k = fft2c_f32(32, 32, &x).unwrap();
        let back = ifft2c_f32(32, 32, &k).unwrap();
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0f32, f32::max);
        assert!(err < 1e-5);
    }

    #[test]
    fn oracle_matches_fast_path_including_odd_sizes() {
        for &(h, w) in &[(4, 4), (8, 8), (5, 7), (9, 6), (16, 16), (32, 32), (64, 64)] {
            let x = random_field(h, w, 99 + h as u64);
            let fast = fft2c(&x).unwrap();
            let slow = dft2c_reference(&x).unwrap();
            assert!(fast.max_abs_diff(&slow) < 1e-10, "{h}x{w}");
        }
    }

    #[test]
    fn oracle_constant_and_impulse() {
        let x = ComplexField::from_real(4, 4, &[1.0; 16]).unwrap();
        let k = dft2c_reference(&x).unwrap();
        assert!((k.get(2, 2) - Complex64::new(4.0, 0.0)).norm() < 1e-12);

        let mut d = vec![Complex64::new(0.0, 0.0); 8 * 6];
        d[3 * 6 + 1] = Complex64::new(1.0, 0.0);
        let k = dft2c_reference(&ComplexField::new(8, 6, d).unwrap()).unwrap();
        let expect = 1.0 / 48f64.sqrt();
        for z in k.data() {
            assert!((z.norm() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_rejects_large_grids() {
        let x = ComplexField::zeros(65, 8).unwrap();
        assert!(matches!(dft2c_reference(&x), Err(Error::Capability(_))));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut x = ComplexField::zeros(4, 4).unwrap();
        x.data_mut()[5] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(fft2c(&x), Err(Error::DataIntegrity(_))));
        assert!(matches!(ifft2c(&x), Err(Error::DataIntegrity(_))));
        assert!(matches!(
            ComplexField::new(2, 2, vec![Complex64::new(f64::INFINITY, 0.0); 4]),
            Err(Error::DataIntegrity(_))
        ));
    }

    #[test]
    fn inner_product_hand_example() {
        let i = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let a = ComplexField::new(2, 2, vec![one, i, zero, zero]).unwrap();
        let b = ComplexField::new(2, 2, vec![i, one, zero, zero]).unwrap();
        let ip = inner_product(&a, &b).unwrap();
        assert!(ip.norm() < 1e-15);
    }

    #[test]
    fn inner_product_symmetries() {
        let a = random_field(8, 8, 1);
        let b = random_field(8, 8, 2);
        let aa = inner_product(&a, &a).unwrap();
        assert!(aa.im.abs() < 1e-12 && aa.re >= 0.0);
        assert!((aa.re - a.norm().powi(2)).abs() < 1e-10);
        let ab = inner_product(&a, &b).unwrap();
        let ba = inner_product(&b, &a).unwrap();
        assert!((ab - ba.conj()).norm() < 1e-12);
        let c = random_field(8, 4, 3);
        assert!(matches!(inner_product(&a, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn complex_channel_stacking_roundtrip() {
        let a = random_field(4, 6, 10);
        let b = random_field(4, 6, 11);
        let fm = FeatureMap::from_complex_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(fm.channels(), 4);
        let back = fm.to_complex_channels().unwrap();
        assert_eq!(back, vec![a, b]);
    }
}
