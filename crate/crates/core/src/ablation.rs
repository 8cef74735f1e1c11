//! Ownership-route ablation: reconstruct one simulated slice under each switch
//! setting with identical seeds, and report leakage plus image metrics.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{leakage_report, psnr_auto, ssim, ReportRow, SsimParams, DEFAULT_CUTOFFS};
use crate::error::{Error, Result};
use crate::field::FeatureMap;
use crate::forward::{adjoint, simulate, ForwardConfig};
use crate::phantom::{make_phantom, synth_coil_maps, PhantomKind};
use crate::router::extract_features;
use crate::sampling::{generate_mask, MaskKind, MaskSpec};
use crate::unit::{content_tokens, AblationSwitches};
use crate::unroll::{init_weights_with, reconstruct, InitOptions, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub switches: AblationSwitches,
}

/// The six ownership-path rows followed by the two parameter-tying rows.
pub fn ablation_variants() -> Vec<Variant> {
    let full = AblationSwitches::default();
    vec![
        Variant {
            name: "mamba_regularizer",
            switches: AblationSwitches::plain(),
        },
        Variant {
            name: "sor_router",
            switches: AblationSwitches::router_only(),
        },
        Variant {
            name: "no_state_access",
            switches: AblationSwitches {
                state_access: false,
                ..full
            },
        },
        Variant {
            name: "no_output_outlet",
            switches: AblationSwitches {
                output_outlet: false,
                ..full
            },
        },
        Variant {
            name: "content_residency",
            switches: AblationSwitches {
                content_residency_violation: true,
                ..full
            },
        },
        Variant {
            name: "so_mamba",
            switches: full,
        },
        Variant {
            name: "tied_a_delta",
            switches: AblationSwitches { tie_a_delta: true, ..full },
        },
        Variant {
            name: "tied_b_c",
            switches: AblationSwitches { tie_b_c: true, ..full },
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSetup {
    pub case: String,
    pub model: ModelConfig,
    pub phantom: PhantomKind,
    pub size: usize,
    pub phantom_seed: u64,
    pub mask: MaskKind,
    pub mask_seed: u64,
    pub center_fraction: Option<f64>,
    pub spokes: Option<usize>,
    pub acceleration: usize,
    pub noise_std: f64,
    pub noise_seed: u64,
    pub cutoffs: Vec<f64>,
    /// Start with a random modulation projection so the access switch acts
    /// on an untrained model.
    pub random_modulation: bool,
}

impl Default for AblationSetup {
    fn default() -> Self {
        Self {
            case: "shepp_logan".into(),
            model: ModelConfig::default(),
            phantom: PhantomKind::SheppLogan,
            size: 64,
            phantom_seed: 0,
            mask: MaskKind::Equispaced,
            mask_seed: 0,
            center_fraction: None,
            spokes: None,
            acceleration: 4,
            noise_std: 0.0,
            noise_seed: 0,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            random_modulation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub variant: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub rows: Vec<ReportRow>,
    pub metrics: Vec<VariantMetrics>,
    pub zero_filled_psnr: f64,
    /// Whether the residency-violating variant feeds the first unit different
    /// content tokens than the default wiring on the same weights.
    pub residency_changes_tokens: bool,
}

pub fn run_ablation(setup: &AblationSetup) -> Result<AblationOutcome> {
    run_ablation_with(setup, false)
}

/// Like [`run_ablation`], optionally running the variants on separate threads.
pub fn run_ablation_with(setup: &AblationSetup, parallel: bool) -> Result<AblationOutcome> {
    if setup.cutoffs.is_empty() {
        return Err(Error::Usage("ablation needs at least one cutoff".into()));
    }
    let truth = make_phantom(setup.phantom, setup.size, setup.phantom_seed)?;
    let mut spec = MaskSpec::new(setup.mask, setup.size, setup.size, setup.acceleration).with_seed(setup.mask_seed);
    spec.center_fraction = setup.center_fraction;
    spec.spokes = setup.spokes;
    let mask = generate_mask(&spec)?;
    let fcfg = if setup.model.n_coils == 1 {
        ForwardConfig::single_coil(mask)
    } else {
        ForwardConfig::multi_coil(mask, synth_coil_maps(setup.model.n_coils, setup.size)?)?
    };
    let y = simulate(&truth, &fcfg, setup.noise_std, setup.noise_seed)?;
    let reference = truth.magnitude();
    let zf = adjoint(&fcfg, &y)?;
    let zero_filled_psnr = psnr_auto(&reference, &zf.magnitude())?;
    let opts = InitOptions {
        random_modulation: setup.random_modulation,
        zero_decode: false,
    };

    let variants = ablation_variants();
    let run_one = |v: &Variant| -> Result<(Vec<ReportRow>, VariantMetrics)> {
        let cfg = ModelConfig {
            switches: v.switches,
            ..setup.model.clone()
        };
        let w = init_weights_with(&cfg, opts)?;
        let rec = reconstruct(&y, &fcfg, &w, &cfg)?;
        let report = leakage_report(&rec.probes, &setup.cutoffs)?;
        let rows = report
            .rows
            .iter()
            .map(|r| ReportRow::from_leakage(&setup.case, v.name, r))
            .collect();
        let est = rec.image.magnitude();
        let m = VariantMetrics {
            variant: v.name.to_string(),
            psnr: psnr_auto(&reference, &est)?,
            ssim: ssim(&reference, &est, setup.size, setup.size, &SsimParams::default())?,
        };
        Ok((rows, m))
    };
    // Results are collected in variant order whether or not threads are used.
    let results: Vec<Result<_>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = variants.iter().map(|v| s.spawn(move || run_one(v))).collect();
            handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
        })
    } else {
        variants.iter().map(run_one).collect()
    };
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    for r in results {
        let (vr, m) = r?;
        rows.extend(vr);
        metrics.push(m);
    }

    let base_cfg = ModelConfig {
        switches: AblationSwitches::default(),
        ..setup.model.clone()
    };
    let w = init_weights_with(&base_cfg, opts)?;
    let unit = w.unit(0, 0);
    let feats = extract_features(&FeatureMap::from_complex_channels(&fcfg.coil_images(&zf)?)?, &unit.router)?;
    let default_tokens = content_tokens(&feats, unit, &base_cfg.ssm, &AblationSwitches::default())?;
    let violating = AblationSwitches {
        content_residency_violation: true,
        ..AblationSwitches::default()
    };
    let violating_tokens = content_tokens(&feats, unit, &base_cfg.ssm, &violating)?;

    Ok(AblationOutcome {
        rows,
        metrics,
        zero_filled_psnr,
        residency_changes_tokens: default_tokens.data != violating_tokens.data,
    })
}
