//! Synthetic ground truth: the modified Shepp-Logan head phantom, a seeded
//! smooth texture, and Gaussian-profile coil sensitivity maps.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::rng::seeded;

pub const MIN_PHANTOM_SIZE: usize = 32;
pub const MAX_PHANTOM_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    SheppLogan,
    SmoothTexture,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp_logan" => Ok(PhantomKind::SheppLogan),
            "smooth_texture" => Ok(PhantomKind::SmoothTexture),
            other => Err(Error::Config(format!("unknown phantom kind `{other}`"))),
        }
    }
}

/// `(intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees)` in the
/// unit square `[-1, 1]²`, modified (higher contrast) variant.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

fn check_size(size: usize) -> Result<()> {
    if !(MIN_PHANTOM_SIZE..=MAX_PHANTOM_SIZE).contains(&size) || !size.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "phantom size {size} unsupported: must be even and within [{MIN_PHANTOM_SIZE}, {MAX_PHANTOM_SIZE}]"
        )));
    }
    Ok(())
}

/// Pixel center to unit-square coordinates, y pointing up.
fn unit_coords(i: usize, j: usize, n: usize) -> (f64, f64) {
    let x = 2.0 * (j as f64 + 0.5) / n as f64 - 1.0;
    let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
    (x, y)
}

fn shepp_logan(n: usize) -> Vec<f64> {
    let mut img = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (x, y) = unit_coords(i, j, n);
            let mut v = 0.0;
            for &(val, a, b, x0, y0, deg) in &SHEPP_LOGAN {
                let (s, c) = deg.to_radians().sin_cos();
                let (dx, dy) = (x - x0, y - y0);
                let (u, w) = (dx * c + dy * s, -dx * s + dy * c);
                if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                    v += val;
                }
            }
            img[i * n + j] = v;
        }
    }
    let peak = img.iter().cloned().fold(0.0, f64::max);
    // Overlap sums like 1 - 0.8 - 0.2 can land a hair below zero.
    img.iter().map(|&v| (v / peak).clamp(0.0, 1.0)).collect()
}

fn smooth_texture(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..8)
        .map(|_| {
            let amp = rng.gen_range(0.3..1.0);
            let fx = rng.gen_range(-3.0..3.0);
            let fy = rng.gen_range(-3.0..3.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            (amp, fx, fy, phase)
        })
        .collect();
    let mut img: Vec<f64> = (0..n * n)
        .map(|p| {
            let (x, y) = unit_coords(p / n, p % n, n);
            let low: f64 = waves
                .iter()
                .map(|&(amp, fx, fy, ph)| amp * (PI * (fx * x + fy * y) + ph).cos())
                .sum();
            low + 0.15 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    img.iter_mut().for_each(|v| *v = (*v - lo) / span);
    img
}

/// Square real-valued phantom with magnitudes in `[0, 1]`. `seed` only affects
/// the texture kind.
pub fn make_phantom(kind: PhantomKind, size: usize, seed: u64) -> Result<ComplexField> {
    check_size(size)?;
    let re = match kind {
        PhantomKind::SheppLogan => shepp_logan(size),
        PhantomKind::SmoothTexture => smooth_texture(size, seed),
    };
    ComplexField::from_real(size, size, &re)
}

/// `n_coils` maps on a `size × size` grid. Coil `c` has a Gaussian magnitude
/// profile centered on the border at angle `2πc/n` and constant phase `2πc/n`;
/// the set is normalized so `Σ_c |s_c|² = 1` at every pixel.
pub fn synth_coil_maps(n_coils: usize, size: usize) -> Result<Vec<ComplexField>> {
    if n_coils == 0 {
        return Err(Error::Config("at least one coil is required".into()));
    }
    if size < 2 {
        return Err(Error::Config(format!("coil map size {size} is below 2")));
    }
    let half = size as f64 / 2.0;
    let sigma = 0.75 * size as f64;
    let mut raw: Vec<Vec<Complex64>> = Vec::with_capacity(n_coils);
    for c in 0..n_coils {
        let theta = 2.0 * PI * c as f64 / n_coils as f64;
        let (ay, ax) = (half - half * theta.sin(), half + half * theta.cos());
        let phase = Complex64::from_polar(1.0, theta);
        raw.push(
            (0..size * size)
                .map(|p| {
                    let (i, j) = ((p / size) as f64 + 0.5, (p % size) as f64 + 0.5);
                    let d2 = (i - ay).powi(2) + (j - ax).powi(2);
                    phase * (-d2 / (2.0 * sigma * sigma)).exp()
                })
                .collect(),
        );
    }
    let norms: Vec<f64> = (0..size * size)
        .map(|p| raw.iter().map(|m| m[p].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    raw.into_iter()
        .map(|m| {
            let data = m.iter().zip(&norms).map(|(v, &s)| v / s).collect();
            ComplexField::new(size, size, data)
        })
        .collect()
}
