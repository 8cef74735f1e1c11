//! MRI encoding operator `A` (optional coil weighting, centered FFT, mask),
//! its adjoint, noisy measurement simulation, and k-space data consistency.

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Fft2Plan};
use crate::rng::seeded;
use crate::sampling::SampleMask;

/// Tolerance on `Σ_c |s_c|² = 1` when accepting coil maps.
pub const COIL_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoilMode {
    SingleCoil,
    MultiCoil,
}

/// Hard replacement of sampled bins, or the weighted average
/// `(k + λ·y) / (1 + λ)` on sampled bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "lambda")]
#[derive(Default)]
pub enum DcMode {
    #[default]
    Hard,
    Soft(f64),
}

#[derive(Debug, Clone)]
pub struct ForwardConfig {
    mask: SampleMask,
    coil_maps: Option<Vec<ComplexField>>,
}

impl ForwardConfig {
    pub fn single_coil(mask: SampleMask) -> Self {
        Self { mask, coil_maps: None }
    }

    pub fn multi_coil(mask: SampleMask, coil_maps: Vec<ComplexField>) -> Result<Self> {
        if coil_maps.is_empty() {
            return Err(Error::Config("multi-coil mode needs at least one coil map".into()));
        }
        for (c, s) in coil_maps.iter().enumerate() {
            if s.dims() != mask.dims() {
                return Err(Error::Shape(format!(
                    "coil map {c} is {}x{}, mask is {}x{}",
                    s.height(),
                    s.width(),
                    mask.height(),
                    mask.width()
                )));
            }
        }
        for p in 0..mask.height() * mask.width() {
            let total: f64 = coil_maps.iter().map(|s| s.data()[p].norm_sqr()).sum();
            if (total - 1.0).abs() > COIL_NORM_TOL {
                return Err(Error::Config(format!(
                    "coil maps are not normalized at pixel {p}: sum |s|^2 = {total}"
                )));
            }
        }
        Ok(Self {
            mask,
            coil_maps: Some(coil_maps),
        })
    }

    pub fn mask(&self) -> &SampleMask {
        &self.mask
    }

    pub fn coil_maps(&self) -> Option<&[ComplexField]> {
        self.coil_maps.as_deref()
    }

    pub fn mode(&self) -> CoilMode {
        if self.coil_maps.is_some() {
            CoilMode::MultiCoil
        } else {
            CoilMode::SingleCoil
        }
    }

    pub fn n_coils(&self) -> usize {
        self.coil_maps.as_ref().map_or(1, Vec::len)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    fn check_image(&self, image: &ComplexField) -> Result<()> {
        if image.dims() != self.dims() {
            return Err(Error::Shape(format!(
                "image is {}x{}, operator expects {}x{}",
                image.height(),
                image.width(),
                self.mask.height(),
                self.mask.width()
            )));
        }
        Ok(())
    }

    fn check_measurements(&self, y: &Measurements) -> Result<()> {
        if y.coils.len() != self.n_coils() {
            return Err(Error::Shape(format!(
                "measurements carry {} coils, operator has {}",
                y.coils.len(),
                self.n_coils()
            )));
        }
        for k in &y.coils {
            self.check_image(k)?;
        }
        Ok(())
    }

    /// Per-coil images `s_c ⊙ x` (just `x` in single-coil mode).
    pub fn coil_images(&self, image: &ComplexField) -> Result<Vec<ComplexField>> {
        self.check_image(image)?;
        match &self.coil_maps {
            None => Ok(vec![image.clone()]),
            Some(maps) => maps.iter().map(|s| s.hadamard(image)).collect(),
        }
    }

    /// `Σ_c conj(s_c) ⊙ x_c` (identity in single-coil mode).
    pub fn combine_coils(&self, coil_images: &[ComplexField]) -> Result<ComplexField> {
        if coil_images.len() != self.n_coils() {
            return Err(Error::Shape(format!(
                "got {} coil images for {} coils",
                coil_images.len(),
                self.n_coils()
            )));
        }
        match &self.coil_maps {
            None => {
                self.check_image(&coil_images[0])?;
                Ok(coil_images[0].clone())
            }
            Some(maps) => {
                let (h, w) = self.dims();
                let mut acc = ComplexField::zeros(h, w)?;
                for (s, x) in maps.iter().zip(coil_images) {
                    acc = acc.add(&s.conj_hadamard(x)?)?;
                }
                Ok(acc)
            }
        }
    }
}

/// Per-coil k-space data; exactly zero at unsampled bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    coils: Vec<ComplexField>,
}

impl Measurements {
    /// Wrap per-coil k-space, zeroing anything at unsampled bins.
    pub fn new(coils: Vec<ComplexField>, mask: &SampleMask) -> Result<Self> {
        if coils.is_empty() {
            return Err(Error::Shape("measurements need at least one coil".into()));
        }
        let coils = coils
            .into_iter()
            .map(|k| {
                if k.dims() != mask.dims() {
                    return Err(Error::Shape(format!(
                        "k-space {}x{} does not match mask {}x{}",
                        k.height(),
                        k.width(),
                        mask.height(),
                        mask.width()
                    )));
                }
                Ok(apply_mask(k, mask))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { coils })
    }

    pub fn coils(&self) -> &[ComplexField] {
        &self.coils
    }

    pub fn n_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.coils[0].dims()
    }
}

fn apply_mask(mut k: ComplexField, mask: &SampleMask) -> ComplexField {
    for (v, &m) in k.data_mut().iter_mut().zip(mask.bits()) {
        if !m {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    k
}

/// `y = m ⊙ F(s_c ⊙ x)` per coil.
pub fn forward(cfg: &ForwardConfig, image: &ComplexField) -> Result<Measurements> {
    let plan = Fft2Plan::new(cfg.dims().0, cfg.dims().1);
    let coils = cfg
        .coil_images(image)?
        .into_iter()
        .map(|c| {
            let (h, w) = c.dims();
            let mut d = c.into_data();
            plan.forward_inplace(&mut d);
            apply_mask(ComplexField::from_parts_unchecked(h, w, d), cfg.mask())
        })
        .collect();
    Ok(Measurements { coils })
}

/// `A^H y = Σ_c conj(s_c) ⊙ F^{-1}(m ⊙ y_c)`.
pub fn adjoint(cfg: &ForwardConfig, y: &Measurements) -> Result<ComplexField> {
    cfg.check_measurements(y)?;
    let (h, w) = cfg.dims();
    let plan = Fft2Plan::new(h, w);
    let images = y
        .coils
        .iter()
        .map(|k| {
            let mut d = apply_mask(k.clone(), cfg.mask()).into_data();
            plan.inverse_inplace(&mut d);
            ComplexField::from_parts_unchecked(h, w, d)
        })
        .collect::<Vec<_>>();
    cfg.combine_coils(&images)
}

/// Coil-wise k-space of `z` with the sampled bins replaced by (or, in soft
/// mode, blended with) the measurements. Exposed so tests can inspect the
/// replacement point directly.
pub fn consistent_kspace(z: &ComplexField, y: &Measurements, cfg: &ForwardConfig, mode: DcMode) -> Result<Vec<ComplexField>> {
    cfg.check_measurements(y)?;
    let weight = match mode {
        DcMode::Hard => None,
        DcMode::Soft(lambda) => {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::Config(format!("soft DC weight must be finite and >= 0, got {lambda}")));
            }
            Some(lambda)
        }
    };
    let (h, w) = cfg.dims();
    let plan = Fft2Plan::new(h, w);
    cfg.coil_images(z)?
        .into_iter()
        .zip(&y.coils)
        .map(|(c, yc)| {
            let mut k = c.into_data();
            plan.forward_inplace(&mut k);
            for ((kv, &yv), &m) in k.iter_mut().zip(yc.data()).zip(cfg.mask().bits()) {
                if m {
                    *kv = match weight {
                        None => yv,
                        Some(l) => (*kv + yv * l) / (1.0 + l),
                    };
                }
            }
            Ok(ComplexField::from_parts_unchecked(h, w, k))
        })
        .collect()
}

/// Hard data consistency: replace sampled bins of the coil k-space of `z` with `y`.
pub fn data_consistency(z: &ComplexField, y: &Measurements, cfg: &ForwardConfig) -> Result<ComplexField> {
    data_consistency_with(z, y, cfg, DcMode::Hard)
}

pub fn data_consistency_with(z: &ComplexField, y: &Measurements, cfg: &ForwardConfig, mode: DcMode) -> Result<ComplexField> {
    let kspace = consistent_kspace(z, y, cfg, mode)?;
    let (h, w) = cfg.dims();
    let plan = Fft2Plan::new(h, w);
    let images = kspace
        .into_iter()
        .map(|k| {
            let mut d = k.into_data();
            plan.inverse_inplace(&mut d);
            ComplexField::from_parts_unchecked(h, w, d)
        })
        .collect::<Vec<_>>();
    cfg.combine_coils(&images)
}

/// `A x + ε` with circular complex Gaussian noise (per-component std
/// `noise_std`) on sampled bins only.
pub fn simulate(image: &ComplexField, cfg: &ForwardConfig, noise_std: f64, seed: u64) -> Result<Measurements> {
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::Config(format!("noise std must be finite and >= 0, got {noise_std}")));
    }
    let mut y = forward(cfg, image)?;
    if noise_std == 0.0 {
        return Ok(y);
    }
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = seeded(seed);
    for k in &mut y.coils {
        for (v, &m) in k.data_mut().iter_mut().zip(cfg.mask().bits()) {
            if m {
                *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
    }
    Ok(y)
}

/// Zero-filled reconstruction, the unrolled solver's starting point.
pub fn zero_filled(cfg: &ForwardConfig, y: &Measurements) -> Result<ComplexField> {
    adjoint(cfg, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{fft2c, ifft2c, inner_product};
    use crate::phantom::synth_coil_maps;
    use crate::rng::seeded;
    use crate::sampling::{generate_mask, MaskKind, MaskSpec};
    use rand::Rng;

    fn random_field(h: usize, w: usize, rng: &mut crate::rng::Prng) -> ComplexField {
        ComplexField::from_fn(h, w, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn mask16() -> SampleMask {
        generate_mask(&MaskSpec::new(MaskKind::Equispaced, 16, 16, 4).with_center_fraction(0.125)).unwrap()
    }

    #[test]
    fn full_mask_forward_is_fft() {
        let mut rng = seeded(1);
        let x = random_field(8, 8, &mut rng);
        let cfg = ForwardConfig::single_coil(SampleMask::full(8, 8));
        let y = forward(&cfg, &x).unwrap();
        assert!(y.coils()[0].max_abs_diff(&fft2c(&x).unwrap()) == 0.0);
        assert!(adjoint(&cfg, &y).unwrap().max_abs_diff(&x) < 1e-12);
        assert!(adjoint(&cfg, &y).unwrap().max_abs_diff(&ifft2c(&y.coils()[0]).unwrap()) == 0.0);
    }

    #[test]
    fn unsampled_bins_are_exactly_zero() {
        let mut rng = seeded(2);
        let x = random_field(16, 16, &mut rng);
        let cfg = ForwardConfig::single_coil(mask16());
        let y = forward(&cfg, &x).unwrap();
        for (v, &m) in y.coils()[0].data().iter().zip(cfg.mask().bits()) {
            if !m {
                assert_eq!(*v, Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn unit_coil_matches_single_coil() {
        let mut rng = seeded(3);
        let x = random_field(16, 16, &mut rng);
        let single = ForwardConfig::single_coil(mask16());
        let ones = ComplexField::from_real(16, 16, &[1.0; 256]).unwrap();
        let multi = ForwardConfig::multi_coil(mask16(), vec![ones]).unwrap();
        assert_eq!(forward(&single, &x).unwrap(), forward(&multi, &x).unwrap());
    }

    #[test]
    fn adjoint_dot_test_both_modes() {
        let mut rng = seeded(4);
        let maps = synth_coil_maps(4, 16).unwrap();
        let cfgs = [
            ForwardConfig::single_coil(mask16()),
            ForwardConfig::multi_coil(mask16(), maps).unwrap(),
        ];
        for cfg in &cfgs {
            for _ in 0..10 {
                let x = random_field(16, 16, &mut rng);
                let ycoils = (0..cfg.n_coils()).map(|_| random_field(16, 16, &mut rng)).collect();
                let y = Measurements::new(ycoils, cfg.mask()).unwrap();
                let ax = forward(cfg, &x).unwrap();
                let lhs: Complex64 = ax.coils().iter().zip(y.coils()).map(|(a, b)| inner_product(a, b).unwrap()).sum();
                let rhs = inner_product(&x, &adjoint(cfg, &y).unwrap()).unwrap();
                let ax_norm = ax.coils().iter().map(|k| k.norm().powi(2)).sum::<f64>().sqrt();
                let y_norm = y.coils().iter().map(|k| k.norm().powi(2)).sum::<f64>().sqrt();
                assert!((lhs - rhs).norm() / (ax_norm * y_norm) < 1e-10);
            }
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let maps = synth_coil_maps(3, 16).unwrap();
        let cfg = ForwardConfig::multi_coil(mask16(), maps).unwrap();
        let z = ComplexField::zeros(16, 16).unwrap();
        let y = forward(&cfg, &z).unwrap();
        assert!(y.coils().iter().all(|k| k.norm() == 0.0));
        assert_eq!(adjoint(&cfg, &y).unwrap().norm(), 0.0);
    }

    #[test]
    fn dc_full_mask_returns_measured_image() {
        let mut rng = seeded(5);
        let cfg = ForwardConfig::single_coil(SampleMask::full(8, 8));
        let y = forward(&cfg, &random_field(8, 8, &mut rng)).unwrap();
        let z = random_field(8, 8, &mut rng);
        let out = data_consistency(&z, &y, &cfg).unwrap();
        assert!(out.max_abs_diff(&ifft2c(&y.coils()[0]).unwrap()) < 1e-12);
    }

    #[test]
    fn dc_idempotent_and_fixed_point() {
        let mut rng = seeded(6);
        let cfg = ForwardConfig::single_coil(mask16());
        let truth = random_field(16, 16, &mut rng);
        let y = forward(&cfg, &truth).unwrap();
        let z = random_field(16, 16, &mut rng);
        let once = data_consistency(&z, &y, &cfg).unwrap();
        let twice = data_consistency(&once, &y, &cfg).unwrap();
        assert!(once.max_abs_diff(&twice) < 1e-12);
        let fixed = data_consistency(&truth, &y, &cfg).unwrap();
        assert!(fixed.max_abs_diff(&truth) < 1e-12);
    }

    #[test]
    fn dc_replacement_is_exact_per_coil() {
        let mut rng = seeded(7);
        let maps = synth_coil_maps(4, 16).unwrap();
        let cfg = ForwardConfig::multi_coil(mask16(), maps).unwrap();
        let y = simulate(&random_field(16, 16, &mut rng), &cfg, 0.1, 3).unwrap();
        let k = consistent_kspace(&random_field(16, 16, &mut rng), &y, &cfg, DcMode::Hard).unwrap();
        for (kc, yc) in k.iter().zip(y.coils()) {
            for ((a, b), &m) in kc.data().iter().zip(yc.data()).zip(cfg.mask().bits()) {
                if m {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn soft_dc_blends_and_rejects_bad_weight() {
        let mut rng = seeded(8);
        let cfg = ForwardConfig::single_coil(mask16());
        let y = forward(&cfg, &random_field(16, 16, &mut rng)).unwrap();
        let z = random_field(16, 16, &mut rng);
        let soft0 = data_consistency_with(&z, &y, &cfg, DcMode::Soft(0.0)).unwrap();
        assert!(soft0.max_abs_diff(&z) < 1e-12);
        let big = data_consistency_with(&z, &y, &cfg, DcMode::Soft(1e12)).unwrap();
        assert!(big.max_abs_diff(&data_consistency(&z, &y, &cfg).unwrap()) < 1e-9);
        assert!(matches!(
            data_consistency_with(&z, &y, &cfg, DcMode::Soft(-1.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn simulate_noise_contract() {
        let mut rng = seeded(9);
        let cfg = ForwardConfig::single_coil(SampleMask::full(128, 128));
        let x = random_field(128, 128, &mut rng);
        assert_eq!(simulate(&x, &cfg, 0.0, 1).unwrap(), forward(&cfg, &x).unwrap());
        let a = simulate(&x, &cfg, 0.05, 42).unwrap();
        assert_eq!(a, simulate(&x, &cfg, 0.05, 42).unwrap());
        assert!(matches!(simulate(&x, &cfg, -1.0, 1), Err(Error::Config(_))));

        // Sample-statistics oracle over 16384 sampled bins.
        let clean = forward(&cfg, &x).unwrap();
        let noise: Vec<f64> = a.coils()[0]
            .data()
            .iter()
            .zip(clean.coils()[0].data())
            .flat_map(|(n, c)| [(n - c).re, (n - c).im])
            .collect();
        let mean = noise.iter().sum::<f64>() / noise.len() as f64;
        let std = (noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / noise.len() as f64).sqrt();
        assert!((std / 0.05 - 1.0).abs() < 0.05, "std {std}");
    }

    #[test]
    fn shape_errors() {
        let cfg = ForwardConfig::single_coil(mask16());
        let x = ComplexField::zeros(8, 8).unwrap();
        assert!(matches!(forward(&cfg, &x), Err(Error::Shape(_))));
        let bad = ComplexField::from_real(16, 16, &[0.5; 256]).unwrap();
        assert!(matches!(ForwardConfig::multi_coil(mask16(), vec![bad]), Err(Error::Config(_))));
    }
}
