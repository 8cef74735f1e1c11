//! k-space undersampling masks: equispaced Cartesian, uniform random
//! Cartesian, and golden-angle radial.
//!
//! Cartesian masks sample whole columns (the phase-encode direction is the
//! column index). Radial spokes are rasterized onto the grid by walking from the
//! center in 0.5 px steps and marking the nearest bin.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Golden-angle increment between consecutive radial spokes, in degrees.
pub const GOLDEN_ANGLE_DEG: f64 = 111.246_158_3;

const RADIAL_STEP_PX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Equispaced,
    Random,
    Radial,
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equispaced" => Ok(MaskKind::Equispaced),
            "random" => Ok(MaskKind::Random),
            "radial" => Ok(MaskKind::Radial),
            other => Err(Error::Config(format!("unknown mask kind `{other}`"))),
        }
    }
}

/// Everything needed to regenerate a mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub height: usize,
    pub width: usize,
    pub acceleration: usize,
    /// Fraction of fully sampled center columns (Cartesian kinds). Defaults to
    /// `0.32 / acceleration`, i.e. 0.08 at 4× and 0.04 at 8×.
    #[serde(default)]
    pub center_fraction: Option<f64>,
    /// Spoke count (radial kind). Defaults to `ceil(width / acceleration)`,
    /// which gives 32 spokes at 4× and 16 at 8× on a 128-wide grid.
    #[serde(default)]
    pub spokes: Option<usize>,
    /// Angle of spoke 0 in degrees (radial kind).
    #[serde(default)]
    pub start_angle_deg: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MaskSpec {
    pub fn new(kind: MaskKind, height: usize, width: usize, acceleration: usize) -> Self {
        Self {
            kind,
            height,
            width,
            acceleration,
            center_fraction: None,
            spokes: None,
            start_angle_deg: 0.0,
            seed: 0,
        }
    }

    pub fn with_center_fraction(mut self, cf: f64) -> Self {
        self.center_fraction = Some(cf);
        self
    }

    pub fn with_spokes(mut self, spokes: usize) -> Self {
        self.spokes = Some(spokes);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn effective_center_fraction(&self) -> f64 {
        self.center_fraction.unwrap_or(0.32 / self.acceleration.max(1) as f64)
    }

    pub fn effective_spokes(&self) -> usize {
        self.spokes.unwrap_or_else(|| self.width.div_ceil(self.acceleration.max(1)))
    }
}

/// H×W boolean sampling pattern (true = acquired) with its generating metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    spec: MaskSpec,
}

impl SampleMask {
    /// Build from raw bits; enforces the nonempty and center-bin invariants.
    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>, spec: MaskSpec) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        if !bits[(height / 2) * width + width / 2] {
            return Err(Error::Config("mask must sample the zero-frequency bin".into()));
        }
        Ok(Self { height, width, bits, spec })
    }

    /// All bins sampled.
    pub fn full(height: usize, width: usize) -> Self {
        let mut spec = MaskSpec::new(MaskKind::Equispaced, height, width, 1);
        spec.center_fraction = Some(1.0);
        Self {
            height,
            width,
            bits: vec![true; height * width],
            spec,
        }
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn spec(&self) -> &MaskSpec {
        &self.spec
    }

    pub fn kind(&self) -> MaskKind {
        self.spec.kind
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.width + j]
    }

    pub fn sampled_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn sampled_fraction(&self) -> f64 {
        self.sampled_count() as f64 / self.bits.len() as f64
    }

    /// Indices of fully sampled columns.
    pub fn sampled_columns(&self) -> Vec<usize> {
        (0..self.width).filter(|&j| (0..self.height).all(|i| self.get(i, j))).collect()
    }

    /// True when every column is either fully sampled or fully skipped.
    pub fn is_column_structured(&self) -> bool {
        (0..self.width).all(|j| {
            let first = self.get(0, j);
            (1..self.height).all(|i| self.get(i, j) == first)
        })
    }
}

pub fn generate_mask(spec: &MaskSpec) -> Result<SampleMask> {
    if spec.acceleration < 1 {
        return Err(Error::Config("acceleration must be at least 1".into()));
    }
    if spec.width < 4 {
        return Err(Error::Config(format!("mask width must be at least 4, got {}", spec.width)));
    }
    if spec.height < 2 {
        return Err(Error::Config(format!("mask height must be at least 2, got {}", spec.height)));
    }
    let bits = match spec.kind {
        MaskKind::Equispaced => {
            let cols = equispaced_columns(spec)?;
            columns_to_bits(spec, &cols)
        }
        MaskKind::Random => {
            let cols = random_columns(spec)?;
            columns_to_bits(spec, &cols)
        }
        MaskKind::Radial => radial_bits(spec)?,
    };
    SampleMask::from_bits(spec.height, spec.width, bits, spec.clone())
}

fn center_block(spec: &MaskSpec) -> Result<std::ops::Range<usize>> {
    let cf = spec.effective_center_fraction();
    if !(cf.is_finite() && cf > 0.0 && cf <= 1.0) {
        return Err(Error::Config(format!("center fraction must lie in (0, 1], got {cf}")));
    }
    if cf * (spec.width as f64) < 1.0 {
        return Err(Error::Config(format!(
            "center fraction {cf} of width {} covers less than one column",
            spec.width
        )));
    }
    let n = ((spec.width as f64) * cf).round() as usize;
    let start = spec.width / 2 - n / 2;
    Ok(start..start + n)
}

fn equispaced_columns(spec: &MaskSpec) -> Result<Vec<bool>> {
    let mut cols = vec![false; spec.width];
    for j in center_block(spec)? {
        cols[j] = true;
    }
    for j in (0..spec.width).step_by(spec.acceleration) {
        cols[j] = true;
    }
    Ok(cols)
}

fn random_columns(spec: &MaskSpec) -> Result<Vec<bool>> {
    let mut cols = vec![false; spec.width];
    let center = center_block(spec)?;
    let target = spec.width.div_ceil(spec.acceleration);
    if center.len() > target {
        return Err(Error::Config(format!(
            "center block of {} columns exceeds the {target} columns allowed at {}x",
            center.len(),
            spec.acceleration
        )));
    }
    for j in center.clone() {
        cols[j] = true;
    }
    let mut candidates: Vec<usize> = (0..spec.width).filter(|j| !center.contains(j)).collect();
    let mut rng = seeded(spec.seed);
    candidates.shuffle(&mut rng);
    for &j in candidates.iter().take(target - center.len()) {
        cols[j] = true;
    }
    Ok(cols)
}

fn columns_to_bits(spec: &MaskSpec, cols: &[bool]) -> Vec<bool> {
    (0..spec.height).flat_map(|_| cols.iter().copied()).collect()
}

fn radial_bits(spec: &MaskSpec) -> Result<Vec<bool>> {
    let spokes = spec.effective_spokes();
    if spokes < 1 {
        return Err(Error::Config("radial mask needs at least one spoke".into()));
    }
    let (h, w) = (spec.height, spec.width);
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let mut bits = vec![false; h * w];
    bits[(h / 2) * w + w / 2] = true;
    for s in 0..spokes {
        let theta = (spec.start_angle_deg + s as f64 * GOLDEN_ANGLE_DEG).to_radians();
        let (dy, dx) = (theta.sin(), theta.cos());
        for dir in [1.0, -1.0] {
            let mut t = 0.0;
            loop {
                // `round` is symmetric about zero, so the two half-spokes
                // mark mirror-image bins about the center.
                let i = cy + (dir * t * dy).round();
                let j = cx + (dir * t * dx).round();
                if i < 0.0 || j < 0.0 || i >= h as f64 || j >= w as f64 {
                    break;
                }
                bits[i as usize * w + j as usize] = true;
                t += RADIAL_STEP_PX;
            }
        }
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equispaced_hand_example() {
        let spec = MaskSpec::new(MaskKind::Equispaced, 8, 8, 4).with_center_fraction(0.25);
        let m = generate_mask(&spec).unwrap();
        assert_eq!(m.sampled_columns(), vec![0, 3, 4]);
        assert!(m.is_column_structured());
        assert!(m.get(4, 4));
    }

    #[test]
    fn single_spoke_at_zero_degrees_fills_center_row() {
        let spec = MaskSpec::new(MaskKind::Radial, 32, 32, 4).with_spokes(1);
        let m = generate_mask(&spec).unwrap();
        for j in 0..32 {
            assert!(m.get(16, j), "column {j}");
        }
        assert_eq!(m.sampled_count(), 32);
    }

    #[test]
    fn thirty_two_spokes_on_128_grid() {
        let spec = MaskSpec::new(MaskKind::Radial, 128, 128, 4);
        assert_eq!(spec.effective_spokes(), 32);
        let m = generate_mask(&spec).unwrap();
        assert!(m.get(64, 64));
        let f = m.sampled_fraction();
        assert!((0.18..=0.32).contains(&f), "fraction {f}");
    }

    #[test]
    fn random_mask_column_count_and_determinism() {
        let spec = MaskSpec::new(MaskKind::Random, 16, 64, 4).with_seed(11);
        let a = generate_mask(&spec).unwrap();
        let b = generate_mask(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sampled_columns().len(), 16);
        assert!(a.is_column_structured());
        let c = generate_mask(&spec.clone().with_seed(12)).unwrap();
        assert_ne!(a.bits(), c.bits());
    }

    #[test]
    fn configuration_errors() {
        let narrow = MaskSpec::new(MaskKind::Equispaced, 8, 8, 4).with_center_fraction(0.1);
        assert!(matches!(generate_mask(&narrow), Err(Error::Config(_))));
        let zero_af = MaskSpec::new(MaskKind::Equispaced, 8, 8, 0).with_center_fraction(0.5);
        assert!(matches!(generate_mask(&zero_af), Err(Error::Config(_))));
        let no_spokes = MaskSpec::new(MaskKind::Radial, 8, 8, 4).with_spokes(0);
        assert!(matches!(generate_mask(&no_spokes), Err(Error::Config(_))));
    }

    #[test]
    fn default_center_fractions() {
        assert!((MaskSpec::new(MaskKind::Equispaced, 8, 8, 4).effective_center_fraction() - 0.08).abs() < 1e-15);
        assert!((MaskSpec::new(MaskKind::Equispaced, 8, 8, 8).effective_center_fraction() - 0.04).abs() < 1e-15);
    }
}
