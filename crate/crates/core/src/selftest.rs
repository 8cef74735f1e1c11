//! Quick in-binary verification of the numerical contracts: transform oracle,
//! adjointness, projector separability, scan equivalence, ownership wiring, data
//! consistency, leakage calibration, metrics, end-to-end structure, and the
//! ablation harness. Sizes are reduced so the whole run takes seconds.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::ablation::{run_ablation, AblationSetup};
use crate::diagnostics::{outer_band_leakage, psnr, psnr_auto, radial_grid, ssim, SsimParams};
use crate::error::Result;
use crate::field::{dft2c_reference, fft2c, inner_product, ComplexField, FeatureMap};
use crate::forward::{adjoint, consistent_kspace, data_consistency, forward, DcMode, ForwardConfig, Measurements};
use crate::phantom::{make_phantom, synth_coil_maps, PhantomKind};
use crate::rng::{seeded, Prng};
use crate::router::{binomial_project, route};
use crate::sampling::{generate_mask, MaskKind, MaskSpec};
use crate::ssm::{random_scan_problem, selective_scan_chunked, selective_scan_sequential, SsmConfig, TokenSeq};
use crate::unit::{content_tokens, forward_routed, AblationSwitches, UnitWeights};
use crate::unroll::{init_weights, init_weights_with, reconstruct, InitOptions, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn random_field(h: usize, w: usize, rng: &mut Prng) -> ComplexField {
    ComplexField::from_fn(h, w, |_, _| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).expect("finite draws")
}

fn fft_oracle() -> Result<(bool, String)> {
    let mut rng = seeded(1);
    let mut worst = 0.0f64;
    for n in [4, 8, 16, 32] {
        let x = random_field(n, n, &mut rng);
        worst = worst.max(fft2c(&x)?.max_abs_diff(&dft2c_reference(&x)?));
    }
    Ok((worst < 1e-10, format!("max |fast - oracle| = {worst:.3e}")))
}

fn adjoint_test() -> Result<(bool, String)> {
    let mut rng = seeded(2);
    let mask = generate_mask(&MaskSpec::new(MaskKind::Random, 32, 32, 4).with_seed(2))?;
    let cfgs = [
        ForwardConfig::single_coil(mask.clone()),
        ForwardConfig::multi_coil(mask.clone(), synth_coil_maps(4, 32)?)?,
    ];
    let mut worst = 0.0f64;
    for cfg in &cfgs {
        for _ in 0..10 {
            let x = random_field(32, 32, &mut rng);
            let y = Measurements::new((0..cfg.n_coils()).map(|_| random_field(32, 32, &mut rng)).collect(), &mask)?;
            let ax = forward(cfg, &x)?;
            let lhs: Complex64 = ax
                .coils()
                .iter()
                .zip(y.coils())
                .map(|(a, b)| inner_product(a, b))
                .sum::<Result<_>>()?;
            let rhs = inner_product(&x, &adjoint(cfg, &y)?)?;
            let ax_norm = ax.coils().iter().map(|c| c.norm().powi(2)).sum::<f64>().sqrt();
            let y_norm = y.coils().iter().map(|c| c.norm().powi(2)).sum::<f64>().sqrt();
            worst = worst.max((lhs - rhs).norm() / (ax_norm * y_norm + 1e-30));
        }
    }
    Ok((worst < 1e-10, format!("max relative dot-test gap = {worst:.3e}")))
}

/// Dense 5×5 outer-product kernel with mirrored (edge-excluded) indexing.
pub fn dense_binomial_reference(u: &FeatureMap) -> FeatureMap {
    let k = [1.0, 4.0, 6.0, 4.0, 1.0];
    let (h, w) = (u.height() as isize, u.width() as isize);
    let mirror = |i: isize, n: isize| -> usize {
        let r = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        r as usize
    };
    let mut out = FeatureMap::zeros(u.channels(), u.height(), u.width());
    for c in 0..u.channels() {
        let src = u.channel(c);
        let dst = out.channel_mut(c);
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for a in 0..5 {
                    for b in 0..5 {
                        let ii = mirror(i + a as isize - 2, h);
                        let jj = mirror(j + b as isize - 2, w);
                        acc += k[a] * k[b] / 256.0 * src[ii * w as usize + jj];
                    }
                }
                dst[i as usize * w as usize + j as usize] = acc;
            }
        }
    }
    out
}

fn binomial_check() -> Result<(bool, String)> {
    let mut rng = seeded(3);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let u = FeatureMap::new(8, 32, 32, (0..8 * 32 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        worst = worst.max(binomial_project(&u)?.max_abs_diff(&dense_binomial_reference(&u)));
    }
    let checker = FeatureMap::new(
        1,
        32,
        32,
        (0..32 * 32).map(|p| if (p / 32 + p % 32) % 2 == 0 { 1.0 } else { -1.0 }).collect(),
    )?;
    let residual = binomial_project(&checker)?.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((
        worst < 1e-12 && residual <= 1e-12,
        format!("separable vs dense {worst:.3e}, checkerboard residual {residual:.3e}"),
    ))
}

fn scan_check() -> Result<(bool, String)> {
    let cfg = SsmConfig::default();
    let mut rng = seeded(4);
    let mut worst = 0.0f64;
    for n in [64, 256] {
        for _ in 0..3 {
            let (u, p) = random_scan_problem(&cfg, n, &mut rng);
            let a = selective_scan_sequential(&u, &p, &cfg)?;
            let b = selective_scan_chunked(&u, &p, &cfg)?;
            worst = worst.max(a.max_abs_diff(&b));
        }
    }
    let siso = SsmConfig {
        d_model: 1,
        d_state: 1,
        d_head: 1,
        rank: 1,
        chunk: 2,
        expand: 1,
        ..SsmConfig::default()
    };
    let (_, mut p) = random_scan_problem(&siso, 2, &mut rng);
    p.delta = vec![1.0; 2];
    p.a = vec![0.0; 2];
    p.lambda = vec![0.5; 2];
    p.b_mod = vec![1.0; 2];
    p.c_mod = vec![1.0; 2];
    let h = selective_scan_chunked(&TokenSeq::new(2, 1, vec![1.0, 0.0])?, &p, &siso)?.states;
    let exact = h == [0.5, 1.0];
    Ok((worst < 1e-9 && exact, format!("chunked vs sequential {worst:.3e}, SISO h = {h:?}")))
}

fn ownership_check() -> Result<(bool, String)> {
    let cfg = SsmConfig::default();
    let mut rng = seeded(5);
    let mut w = UnitWeights::uniform(&cfg, 1, &mut rng);
    w.modulation = crate::ssm::ModulationWeights::uniform(cfg.d_model / 2, &cfg, &mut rng);
    let (h, wd) = (16, 16);
    let x = FeatureMap::new(
        cfg.d_model,
        h,
        wd,
        (0..cfg.d_model * h * wd).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let sw = AblationSwitches::default();
    let base = content_tokens(&x, &w, &cfg, &sw)?;
    let mut identical = true;
    for _ in 0..20 {
        let mut y = x.clone();
        for c in cfg.d_model / 2..cfg.d_model {
            y.channel_mut(c).iter_mut().for_each(|v| *v += rng.sample::<f64, _>(StandardNormal));
        }
        identical &= content_tokens(&y, &w, &cfg, &sw)?.data == base.data;
    }
    let severed = AblationSwitches::router_only();
    let mut streams = route(&x, &w.router)?;
    let (y0, _) = forward_routed(&x, Some(&streams), &w, &cfg, &severed)?;
    streams.evidence = FeatureMap::zeros(cfg.d_model / 2, h, wd);
    let (y1, _) = forward_routed(&x, Some(&streams), &w, &cfg, &severed)?;
    let unchanged = y0 == y1;
    Ok((
        identical && unchanged,
        format!("tokens invariant to evidence pool: {identical}; severed output invariant to G: {unchanged}"),
    ))
}

fn dc_check() -> Result<(bool, String)> {
    let mut rng = seeded(6);
    let mask = generate_mask(&MaskSpec::new(MaskKind::Equispaced, 32, 32, 4))?;
    let cfg = ForwardConfig::single_coil(mask.clone());
    let y = forward(&cfg, &random_field(32, 32, &mut rng))?;
    let z = random_field(32, 32, &mut rng);
    let k = consistent_kspace(&z, &y, &cfg, DcMode::Hard)?;
    let exact = k[0]
        .data()
        .iter()
        .zip(y.coils()[0].data())
        .zip(mask.bits())
        .all(|((a, b), &m)| !m || a == b);
    let once = data_consistency(&z, &y, &cfg)?;
    let idem = data_consistency(&once, &y, &cfg)?.max_abs_diff(&once);
    let truth = random_field(32, 32, &mut rng);
    let y2 = forward(&cfg, &truth)?;
    let fixed = data_consistency(&truth, &y2, &cfg)?.max_abs_diff(&truth);
    Ok((
        exact && idem < 1e-12 && fixed < 1e-12,
        format!("sampled bins exact: {exact}, idempotence {idem:.3e}, fixed point {fixed:.3e}"),
    ))
}

fn leakage_check() -> Result<(bool, String)> {
    let constant = FeatureMap::filled(2, 32, 32, 3.0);
    let zero_const = outer_band_leakage(&constant, 0.1)? == 0.0;
    let mut rng = seeded(7);
    let rho = radial_grid(64, 64);
    let mut worst = 0.0f64;
    for r in [0.25, 0.35] {
        let expect = rho.iter().filter(|&&p| p > r).count() as f64 / rho.len() as f64;
        let mut mean = 0.0;
        let trials = 16;
        for _ in 0..trials {
            let z = FeatureMap::new(1, 64, 64, (0..4096).map(|_| rng.sample(StandardNormal)).collect())?;
            mean += outer_band_leakage(&z, r)? / trials as f64;
        }
        worst = worst.max((mean - expect).abs());
    }
    let z = FeatureMap::new(3, 32, 32, (0..3 * 1024).map(|_| rng.sample(StandardNormal)).collect())?;
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    for i in 0..20 {
        let l = outer_band_leakage(&z, i as f64 * 1.5 / 19.0)?;
        monotone &= l <= prev;
        prev = l;
    }
    let scaled = FeatureMap::new(3, 32, 32, z.data().iter().map(|v| v * -7.5).collect())?;
    let scale_gap = (outer_band_leakage(&z, 0.25)? - outer_band_leakage(&scaled, 0.25)?).abs();
    Ok((
        zero_const && worst <= 0.02 && monotone && scale_gap < 1e-10,
        format!("constant->0: {zero_const}, white-noise gap {worst:.4}, monotone: {monotone}, scale gap {scale_gap:.3e}"),
    ))
}

fn metric_check() -> Result<(bool, String)> {
    let reference = vec![0.0; 100];
    let mut estimate = reference.clone();
    estimate[0] = 1.0;
    let p = psnr(&reference, &estimate, 1.0)?;
    let mut rng = seeded(8);
    let img: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect();
    let s = ssim(&img, &img, 32, 32, &SsimParams::default())?;
    Ok((p == 20.0 && (s - 1.0).abs() < 1e-9, format!("PSNR {p} dB, SSIM(x, x) = {s}")))
}

fn end_to_end_check() -> Result<(bool, String)> {
    let n = 32;
    let truth = make_phantom(PhantomKind::SheppLogan, n, 0)?;
    let mask = generate_mask(&MaskSpec::new(MaskKind::Equispaced, n, n, 4))?;
    let fcfg = ForwardConfig::single_coil(mask.clone());
    let y = forward(&fcfg, &truth)?;
    let cfg = ModelConfig {
        seed: 3,
        ..ModelConfig::default()
    };
    let w = init_weights(&cfg)?;
    let a = reconstruct(&y, &fcfg, &w, &cfg)?;
    let b = reconstruct(&y, &fcfg, &w, &cfg)?;
    let repeat = a.image == b.image && a.probes == b.probes;
    let consistent = a.kspace[0]
        .data()
        .iter()
        .zip(y.coils()[0].data())
        .zip(mask.bits())
        .all(|((k, v), &m)| !m || k == v);
    let zw = init_weights_with(
        &cfg,
        InitOptions {
            zero_decode: true,
            ..Default::default()
        },
    )?;
    let z = reconstruct(&y, &fcfg, &zw, &cfg)?;
    let reference = truth.magnitude();
    let zf = psnr_auto(&reference, &adjoint(&fcfg, &y)?.magnitude())?;
    let zero_psnr = psnr_auto(&reference, &z.image.magnitude())?;
    Ok((
        a.probes.len() == 12 && repeat && consistent && zf == zero_psnr,
        format!(
            "probes {}, repeatable: {repeat}, sampled bins exact: {consistent}, zero-decode PSNR {zero_psnr:.6} vs zero-filled {zf:.6}",
            a.probes.len()
        ),
    ))
}

fn ablation_check() -> Result<(bool, String)> {
    let setup = AblationSetup {
        size: 32,
        model: ModelConfig {
            groups: 1,
            ..ModelConfig::default()
        },
        ..AblationSetup::default()
    };
    let out = run_ablation(&setup)?;
    let per_cutoff = setup.cutoffs.len() * 8 == out.rows.len();
    Ok((
        per_cutoff && out.residency_changes_tokens,
        format!(
            "{} report rows, residency changes tokens: {}",
            out.rows.len(),
            out.residency_changes_tokens
        ),
    ))
}

pub fn run_selftest() -> Vec<CheckResult> {
    vec![
        check("fft_oracle", fft_oracle()),
        check("adjoint", adjoint_test()),
        check("binomial_separability", binomial_check()),
        check("scan_equivalence", scan_check()),
        check("ownership", ownership_check()),
        check("data_consistency", dc_check()),
        check("leakage_calibration", leakage_check()),
        check("metrics", metric_check()),
        check("end_to_end", end_to_end_check()),
        check("ablation", ablation_check()),
    ]
}
