//! Outer-band leakage of probe grids and image quality metrics.
//!
//! Leakage of a `C × H × W` grid at cutoff `r` is the share of spectral power,
//! summed over channels, at normalized radius `ρ > r`, where
//! `ρ = 2·√(f_x² + f_y²)` and `f = (k - N/2) / N` is the per-axis frequency of
//! centered bin `k`. `ρ` is 1 at an axis-edge Nyquist bin and `√2` at a corner.
//! The denominator is `total·(1 + ε)`, which keeps the ratio scale invariant.

use serde::{Deserialize, Serialize};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{FeatureMap, Fft2Plan};
use crate::unit::{ProbeGrid, UnitProbe};

/// Relative floor on leakage denominators and on `η`.
pub const LEAKAGE_EPS: f64 = 1e-8;
pub const PSNR_CAP_DB: f64 = 300.0;
pub const DEFAULT_CUTOFFS: [f64; 2] = [0.25, 0.35];

/// Anything that can hand out real channels of a fixed `C × H × W` grid.
pub trait ChannelGrid {
    fn shape(&self) -> (usize, usize, usize);
    /// Write channel `c` as complex values (zero imaginary part) into `buf`.
    fn load_channel(&self, c: usize, buf: &mut [Complex64]);
}

impl ChannelGrid for FeatureMap {
    fn shape(&self) -> (usize, usize, usize) {
        (self.channels(), self.height(), self.width())
    }

    fn load_channel(&self, c: usize, buf: &mut [Complex64]) {
        for (b, &v) in buf.iter_mut().zip(self.channel(c)) {
            *b = Complex64::new(v, 0.0);
        }
    }
}

impl ChannelGrid for ProbeGrid {
    fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn load_channel(&self, c: usize, buf: &mut [Complex64]) {
        for (b, &v) in buf.iter_mut().zip(self.channel(c)) {
            *b = Complex64::new(v as f64, 0.0);
        }
    }
}

/// `ρ` for every centered bin of an `h × w` grid, row-major.
pub fn radial_grid(h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        let fy = (i as f64 - (h / 2) as f64) / h as f64;
        for j in 0..w {
            let fx = (j as f64 - (w / 2) as f64) / w as f64;
            out.push(2.0 * (fx * fx + fy * fy).sqrt());
        }
    }
    out
}

fn check_cutoff(r: f64) -> Result<()> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::Config(format!("leakage cutoff must be finite and >= 0, got {r}")));
    }
    Ok(())
}

/// Outer and total power per cutoff, summed over channels.
fn band_powers<G: ChannelGrid + ?Sized>(z: &G, cutoffs: &[f64]) -> Result<(Vec<f64>, f64)> {
    for &r in cutoffs {
        check_cutoff(r)?;
    }
    let (c, h, w) = z.shape();
    if h == 0 || w == 0 {
        return Err(Error::Shape("leakage needs a non-empty grid".into()));
    }
    let rho = radial_grid(h, w);
    let plan = Fft2Plan::new(h, w);
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    let mut outer = vec![0.0; cutoffs.len()];
    let mut total = 0.0;
    for ch in 0..c {
        z.load_channel(ch, &mut buf);
        if buf.iter().any(|v| !v.re.is_finite()) {
            return Err(Error::DataIntegrity(format!("non-finite value in channel {ch}")));
        }
        plan.forward_inplace(&mut buf);
        for (v, &p) in buf.iter().zip(&rho) {
            let pw = v.norm_sqr();
            total += pw;
            for (o, &r) in outer.iter_mut().zip(cutoffs) {
                if p > r {
                    *o += pw;
                }
            }
        }
    }
    Ok((outer, total))
}

fn ratio(outer: f64, total: f64) -> f64 {
    if total == 0.0 {
        0.0
    } else {
        outer / (total * (1.0 + LEAKAGE_EPS))
    }
}

/// Leakage at several cutoffs from one set of transforms.
pub fn outer_band_leakage_multi<G: ChannelGrid + ?Sized>(z: &G, cutoffs: &[f64]) -> Result<Vec<f64>> {
    let (outer, total) = band_powers(z, cutoffs)?;
    Ok(outer.into_iter().map(|o| ratio(o, total)).collect())
}

pub fn outer_band_leakage<G: ChannelGrid + ?Sized>(z: &G, r: f64) -> Result<f64> {
    Ok(outer_band_leakage_multi(z, &[r])?[0])
}

/// Readout-to-state expression ratio `η = RLeak / (HLeak + ε)`.
pub fn eta(hleak: f64, rleak: f64) -> f64 {
    rleak / (hleak + LEAKAGE_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageRow {
    pub r: f64,
    pub hleak: f64,
    pub rleak: f64,
    pub eta: f64,
}

impl LeakageRow {
    pub fn new(r: f64, hleak: f64, rleak: f64) -> Self {
        Self {
            r,
            hleak,
            rleak,
            eta: eta(hleak, rleak),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    PerUnit,
    PerSlice,
    PerCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub scope: Scope,
    pub epsilon: f64,
    /// One row per cutoff, in the requested order.
    pub rows: Vec<LeakageRow>,
    /// Per-unit rows (per-slice reports) or per-slice rows (per-case reports),
    /// in input order.
    pub members: Vec<Vec<LeakageRow>>,
}

/// HLeak/RLeak/η of one unit probe.
pub fn unit_leakage(probe: &UnitProbe, cutoffs: &[f64]) -> Result<Vec<LeakageRow>> {
    let h = outer_band_leakage_multi(&probe.hidden_grid, cutoffs)?;
    let r = outer_band_leakage_multi(&probe.readout_grid, cutoffs)?;
    Ok(cutoffs
        .iter()
        .zip(h.iter().zip(&r))
        .map(|(&c, (&h, &r))| LeakageRow::new(c, h, r))
        .collect())
}

/// Average HLeak and RLeak column-wise, then form `η` from the averages.
fn mean_rows(members: &[Vec<LeakageRow>], cutoffs: &[f64]) -> Vec<LeakageRow> {
    let n = members.len() as f64;
    cutoffs
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let h = members.iter().map(|m| m[i].hleak).sum::<f64>() / n;
            let l = members.iter().map(|m| m[i].rleak).sum::<f64>() / n;
            LeakageRow::new(r, h, l)
        })
        .collect()
}

/// Slice-level report: units averaged in the order given.
pub fn leakage_report(probes: &[UnitProbe], cutoffs: &[f64]) -> Result<LeakageReport> {
    if probes.is_empty() {
        return Err(Error::Usage("leakage report needs at least one probe".into()));
    }
    if cutoffs.is_empty() {
        return Err(Error::Usage("leakage report needs at least one cutoff".into()));
    }
    let members = probes.iter().map(|p| unit_leakage(p, cutoffs)).collect::<Result<Vec<_>>>()?;
    Ok(LeakageReport {
        scope: Scope::PerSlice,
        epsilon: LEAKAGE_EPS,
        rows: mean_rows(&members, cutoffs),
        members,
    })
}

/// Case-level report from slice reports sharing one cutoff list.
pub fn aggregate_slices(slices: &[LeakageReport]) -> Result<LeakageReport> {
    let first = slices
        .first()
        .ok_or_else(|| Error::Usage("case aggregation needs at least one slice".into()))?;
    let cutoffs: Vec<f64> = first.rows.iter().map(|r| r.r).collect();
    for s in slices {
        if s.rows.iter().map(|r| r.r).ne(cutoffs.iter().copied()) {
            return Err(Error::Shape("slice reports use different cutoffs".into()));
        }
    }
    let members: Vec<Vec<LeakageRow>> = slices.iter().map(|s| s.rows.clone()).collect();
    Ok(LeakageReport {
        scope: Scope::PerCase,
        epsilon: LEAKAGE_EPS,
        rows: mean_rows(&members, &cutoffs),
        members,
    })
}

/// One line of the emitted report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub case: String,
    pub variant: String,
    pub r: f64,
    pub hleak: f64,
    pub rleak: f64,
    pub eta: f64,
}

impl ReportRow {
    pub fn from_leakage(case: &str, variant: &str, row: &LeakageRow) -> Self {
        Self {
            case: case.to_string(),
            variant: variant.to_string(),
            r: row.r,
            hleak: row.hleak,
            rleak: row.rleak,
            eta: row.eta,
        }
    }
}

pub const CSV_HEADER: &str = "case,variant,r,hleak,rleak,eta";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.10},{:.10},{:.10}\n",
            csv_field(&r.case),
            csv_field(&r.variant),
            r.r,
            r.hleak,
            r.rleak,
            r.eta
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_json(rows: &[ReportRow]) -> String {
    serde_json::to_string_pretty(rows).expect("report rows serialize")
}

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "reference has {} pixels, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Shape("metrics need at least one pixel".into()));
    }
    if reference.iter().chain(estimate).any(|v| !v.is_finite()) {
        return Err(Error::DataIntegrity("non-finite pixel in metric input".into()));
    }
    Ok(())
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &[f64], estimate: &[f64], peak: f64) -> Result<f64> {
    check_pair(reference, estimate)?;
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::Config(format!("PSNR peak must be positive, got {peak}")));
    }
    let mse = reference.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn reference_peak(reference: &[f64]) -> Result<f64> {
    let peak = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::Config("reference maximum is not positive; supply an explicit peak".into()));
    }
    Ok(peak)
}

/// PSNR with the peak taken as the reference maximum.
pub fn psnr_auto(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(reference, estimate)?;
    psnr(reference, estimate, reference_peak(reference)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range; `None` uses the reference maximum.
    pub peak: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: None,
        }
    }
}

fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h × w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = k.iter().enumerate().map(|(t, &kv)| kv * img[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = k.iter().enumerate().map(|(t, &kv)| kv * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean local SSIM over all fully contained Gaussian windows.
pub fn ssim(reference: &[f64], estimate: &[f64], height: usize, width: usize, p: &SsimParams) -> Result<f64> {
    check_pair(reference, estimate)?;
    if reference.len() != height * width {
        return Err(Error::Shape(format!(
            "{} pixels do not form a {height}x{width} image",
            reference.len()
        )));
    }
    if p.window == 0 || p.window > height || p.window > width {
        return Err(Error::Config(format!(
            "SSIM window {} does not fit a {height}x{width} image",
            p.window
        )));
    }
    if p.sigma.is_nan() || p.sigma <= 0.0 {
        return Err(Error::Config("SSIM sigma must be positive".into()));
    }
    let peak = match p.peak {
        Some(v) if v.is_finite() && v > 0.0 => v,
        Some(v) => return Err(Error::Config(format!("SSIM peak must be positive, got {v}"))),
        None => reference_peak(reference).unwrap_or(1.0),
    };
    let c1 = (p.k1 * peak).powi(2);
    let c2 = (p.k2 * peak).powi(2);
    let k = gaussian_window(p.window, p.sigma);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mx = filter_valid(reference, height, width, &k);
    let my = filter_valid(estimate, height, width, &k);
    let sxx = filter_valid(&prod(reference, reference), height, width, &k);
    let syy = filter_valid(&prod(estimate, estimate), height, width, &k);
    let sxy = filter_valid(&prod(reference, estimate), height, width, &k);
    let mut acc = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        let num = (2.0 * ux * uy + c1) * (2.0 * cov + c2);
        let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
        acc += if den == 0.0 { 1.0 } else { num / den };
    }
    Ok(acc / mx.len() as f64)
}
