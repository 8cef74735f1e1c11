//! State-ownership router: image features are split into a carrier pool and a
//! non-resident pool, each projected per pixel. The carrier pool passes through
//! a fixed binomial projector (5-tap blur, 2× decimation, bilinear restore) to
//! become the resident carrier `L`; what the projector rejects is added to the
//! projected non-resident pool to form the evidence stream `G`.
//!
//! Only `L` may source content tokens. `G` reaches the unit through interface
//! modulation and the output outlet.

use crate::error::{Error, Result};
use crate::field::FeatureMap;
use crate::nn::{join, silu, Conv3x3, Linear, Params};
use crate::rng::Prng;

/// Normalized 5-tap binomial kernel.
pub const BINOMIAL_KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Resident carrier `L` and non-resident evidence `G`, each `C/2 × H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnershipStreams {
    pub carrier: FeatureMap,
    pub evidence: FeatureMap,
    /// `U_car - L`, kept for inspection.
    pub rejected: FeatureMap,
    /// Projected carrier pool before the binomial projector.
    pub carrier_pool: FeatureMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterWeights {
    /// Feature extractor: one 3×3 stage followed by SiLU.
    pub phi: Conv3x3,
    pub proj_car: Linear,
    pub proj_nr: Linear,
}

impl RouterWeights {
    pub fn zeros(in_channels: usize, d_model: usize) -> Self {
        let half = d_model / 2;
        Self {
            phi: Conv3x3::zeros(in_channels, d_model),
            proj_car: Linear::zeros(half, half),
            proj_nr: Linear::zeros(half, half),
        }
    }

    pub fn uniform(in_channels: usize, d_model: usize, rng: &mut Prng) -> Self {
        let half = d_model / 2;
        Self {
            phi: Conv3x3::uniform(in_channels, d_model, rng),
            proj_car: Linear::uniform(half, half, rng),
            proj_nr: Linear::uniform(half, half, rng),
        }
    }

    pub fn d_model(&self) -> usize {
        self.phi.out_ch
    }
}

impl Params for RouterWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.phi.visit(&join(prefix, "phi"), f);
        self.proj_car.visit(&join(prefix, "proj_car"), f);
        self.proj_nr.visit(&join(prefix, "proj_nr"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.phi.visit_mut(&join(prefix, "phi"), f);
        self.proj_car.visit_mut(&join(prefix, "proj_car"), f);
        self.proj_nr.visit_mut(&join(prefix, "proj_nr"), f);
    }
}

/// `X = SiLU(conv3x3(x))` on stacked real/imaginary image channels.
pub fn extract_features(x: &FeatureMap, w: &RouterWeights) -> Result<FeatureMap> {
    if x.channels() != w.phi.in_ch {
        return Err(Error::Shape(format!(
            "feature extractor expects {} image channels, got {}",
            w.phi.in_ch,
            x.channels()
        )));
    }
    let mut out = w.phi.apply(x)?;
    out.data_mut().iter_mut().for_each(|v| *v = silu(*v));
    Ok(out)
}

/// Mirror index without repeating the edge sample: -1 → 1, n → n-2.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// One 1-D binomial pass along rows (`horizontal`) or columns of every channel.
fn binomial_pass(u: &FeatureMap, horizontal: bool) -> FeatureMap {
    let (h, w) = (u.height(), u.width());
    let mut out = FeatureMap::zeros(u.channels(), h, w);
    for c in 0..u.channels() {
        let src = u.channel(c);
        let dst = out.channel_mut(c);
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for (t, &k) in BINOMIAL_KERNEL.iter().enumerate() {
                    let off = t as isize - 2;
                    let v = if horizontal {
                        src[i * w + reflect(j as isize + off, w)]
                    } else {
                        src[reflect(i as isize + off, h) * w + j]
                    };
                    acc += k * v;
                }
                dst[i * w + j] = acc;
            }
        }
    }
    out
}

fn check_min_dims(u: &FeatureMap) -> Result<()> {
    if u.height() < 3 || u.width() < 3 {
        return Err(Error::Shape(format!(
            "binomial projection needs at least 3x3, got {}x{}",
            u.height(),
            u.width()
        )));
    }
    Ok(())
}

/// Horizontal pass only; exposed for kernel-level checks.
pub fn binomial_horizontal(u: &FeatureMap) -> Result<FeatureMap> {
    check_min_dims(u)?;
    Ok(binomial_pass(u, true))
}

/// Separable depthwise binomial blur with mirror padding: horizontal, then vertical.
pub fn binomial_project(u: &FeatureMap) -> Result<FeatureMap> {
    check_min_dims(u)?;
    Ok(binomial_pass(&binomial_pass(u, true), false))
}

/// Keep samples at even row and column indices.
fn decimate2(u: &FeatureMap) -> FeatureMap {
    let (h, w) = (u.height() / 2, u.width() / 2);
    let mut out = FeatureMap::zeros(u.channels(), h, w);
    for c in 0..u.channels() {
        let src = u.channel(c);
        let sw = u.width();
        let dst = out.channel_mut(c);
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = src[2 * i * sw + 2 * j];
            }
        }
    }
    out
}

/// Bilinear 2× upsampling taps for one axis with half-pixel centers: output
/// `i` sits at source coordinate `(i + 0.5)/2 - 0.5`, clamped to `[0, n-1]`.
/// Interior weights are therefore (0.75, 0.25) / (0.25, 0.75); the first and
/// last outputs copy the edge sample.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = src.floor() as usize;
            let frac = src - i0 as f64;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, frac)
        })
        .collect()
}

fn upsample2(u: &FeatureMap) -> FeatureMap {
    let (h, w) = (u.height(), u.width());
    let rows = upsample_taps(h);
    let cols = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = FeatureMap::zeros(u.channels(), oh, ow);
    for c in 0..u.channels() {
        let src = u.channel(c);
        let dst = out.channel_mut(c);
        for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
                let bot = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
                dst[i * ow + j] = top * (1.0 - fr) + bot * fr;
            }
        }
    }
    out
}

/// Fixed carrier projector: binomial blur, 2× compaction, bilinear restoration.
pub fn carrier_project(u_car: &FeatureMap) -> Result<FeatureMap> {
    if !u_car.height().is_multiple_of(2) || !u_car.width().is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "carrier projection needs even dimensions, got {}x{}",
            u_car.height(),
            u_car.width()
        )));
    }
    let blurred = binomial_project(u_car)?;
    Ok(upsample2(&decimate2(&blurred)))
}

/// Split, project and assemble `(L, G)` from the extracted features `X`.
pub fn route(x: &FeatureMap, w: &RouterWeights) -> Result<OwnershipStreams> {
    if !x.channels().is_multiple_of(2) {
        return Err(Error::Config(format!(
            "role split needs an even channel count, got {}",
            x.channels()
        )));
    }
    let half = x.channels() / 2;
    if half != w.proj_car.in_dim || half != w.proj_nr.in_dim {
        return Err(Error::Shape(format!(
            "role projections expect {} channels per pool, features give {half}",
            w.proj_car.in_dim
        )));
    }
    let x_car = x.slice_channels(0, half);
    let x_nr = x.slice_channels(half, x.channels());
    let u_car = w.proj_car.apply_channels(&x_car)?;
    let u_nr = w.proj_nr.apply_channels(&x_nr)?;
    let carrier = carrier_project(&u_car)?;
    let rejected = u_car.sub(&carrier)?;
    let evidence = u_nr.add(&rejected)?;
    Ok(OwnershipStreams {
        carrier,
        evidence,
        rejected,
        carrier_pool: u_car,
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = seeded(seed);
        FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Dense 5×5 outer-product kernel with the same mirror indexing.
    fn dense_reference(u: &FeatureMap) -> FeatureMap {
        let (h, w) = (u.height(), u.width());
        let mut out = FeatureMap::zeros(u.channels(), h, w);
        for c in 0..u.channels() {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for a in 0..5 {
                        for b in 0..5 {
                            let si = reflect(i as isize + a as isize - 2, h);
                            let sj = reflect(j as isize + b as isize - 2, w);
                            acc += BINOMIAL_KERNEL[a] * BINOMIAL_KERNEL[b] * u.get(c, si, sj);
                        }
                    }
                    out.channel_mut(c)[i * w + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn constant_is_preserved() {
        let u = FeatureMap::filled(2, 6, 8, 2.0);
        for v in binomial_project(&u).unwrap().data() {
            assert!((v - 2.0).abs() < 1e-15);
        }
        for v in carrier_project(&u).unwrap().data() {
            assert!((v - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_taps_interior_and_border() {
        let row = |v: [f64; 5]| FeatureMap::new(1, 3, 5, [v, v, v].concat()).unwrap();
        let out = binomial_horizontal(&row([0.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
        // Mirrored borders see the center impulse through two taps.
        let expect = [2.0, 4.0, 6.0, 4.0, 2.0].map(|v| v / 16.0);
        for j in 0..5 {
            assert!((out.get(0, 1, j) - expect[j]).abs() < 1e-15);
        }
        let out = binomial_horizontal(&row([1.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        let expect = [6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0, 0.0, 0.0];
        for j in 0..5 {
            assert!((out.get(0, 1, j) - expect[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn separable_equals_dense() {
        for seed in 0..5 {
            let u = random_map(3, 9, 12, seed);
            let fast = binomial_project(&u).unwrap();
            assert!(fast.max_abs_diff(&dense_reference(&u)) < 1e-12);
        }
    }

    #[test]
    fn checkerboard_is_annihilated() {
        let (h, w) = (8, 10);
        let data: Vec<f64> = (0..h * w).map(|p| if (p / w + p % w) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let u = FeatureMap::new(1, h, w, data).unwrap();
        for v in carrier_project(&u).unwrap().data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn depthwise_no_channel_mixing() {
        let mut u = random_map(4, 8, 8, 3);
        u.channel_mut(2).iter_mut().for_each(|v| *v = 0.0);
        let out = carrier_project(&u).unwrap();
        assert!(out.channel(2).iter().all(|&v| v == 0.0));
        assert!(out.channel(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(binomial_project(&FeatureMap::zeros(1, 2, 8)), Err(Error::Shape(_))));
        assert!(matches!(carrier_project(&FeatureMap::zeros(1, 7, 8)), Err(Error::Shape(_))));
        let w = RouterWeights::zeros(2, 8);
        assert!(matches!(route(&FeatureMap::zeros(7, 8, 8), &w), Err(Error::Config(_))));
        assert!(matches!(extract_features(&FeatureMap::zeros(4, 8, 8), &w), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_taps_use_half_pixel_centers() {
        let taps = upsample_taps(4);
        assert_eq!(taps[0], (0, 1, 0.0));
        assert_eq!(taps[1], (0, 1, 0.25));
        assert_eq!(taps[2], (0, 1, 0.75));
        assert_eq!(taps[7], (3, 3, 0.0));
    }

    #[test]
    fn route_identity_projections_on_constant_features() {
        let mut w = RouterWeights::zeros(2, 8);
        w.proj_car = Linear::identity(4);
        w.proj_nr = Linear::identity(4);
        let x = FeatureMap::filled(8, 6, 6, 0.7);
        let s = route(&x, &w).unwrap();
        assert!(s.rejected.data().iter().all(|v| v.abs() < 1e-15));
        assert!(s.evidence.max_abs_diff(&x.slice_channels(4, 8)) < 1e-15);
    }

    #[test]
    fn zero_extractor_gives_zero_features() {
        let w = RouterWeights::zeros(2, 96);
        let x = random_map(2, 16, 16, 1);
        let f = extract_features(&x, &w).unwrap();
        assert_eq!(f.channels(), 96);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }
}
