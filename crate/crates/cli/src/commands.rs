use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use somamba::ablation::run_ablation_with;
use somamba::diagnostics::{leakage_report, psnr_auto, report_csv, report_json, ssim, ReportRow, SsimParams};
use somamba::fieldio::{read_field, write_field, FieldFile};
use somamba::forward::{adjoint, simulate, ForwardConfig, Measurements};
use somamba::phantom::{make_phantom, synth_coil_maps, PhantomKind};
use somamba::sampling::{generate_mask, MaskKind, MaskSpec, SampleMask};
use somamba::selftest::run_selftest;
use somamba::unit::{ProbeGrid, UnitProbe};
use somamba::unroll::{init_weights_with, load_weights_for, reconstruct, save_weights, InitOptions, ModelConfig};
use somamba::{Error, Result};

use crate::config::{resolve_out_dir, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "somamba", version, about = "Unrolled MRI reconstruction with state-ownership diagnostics")]
pub struct Cli {
    /// Output directory (falls back to the config, then $SOMAMBA_OUT_DIR, then `.`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a ground-truth phantom.
    Phantom(PhantomArgs),
    /// Generate a k-space sampling mask.
    Mask(MaskArgs),
    /// Apply the forward model (plus optional noise) to an image.
    Simulate(SimulateArgs),
    /// Reconstruct with seeded or loaded weights and record per-unit probes.
    Recon(ReconArgs),
    /// Compute the leakage report over a directory of probes.
    Diagnose(DiagnoseArgs),
    /// Run every ownership and tying variant on one configuration.
    Ablate(AblateArgs),
    /// Run the built-in numerical checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value = "shepp_logan")]
    pub kind: PhantomKind,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (default `<out-dir>/phantom.fld`).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long, default_value = "equispaced")]
    pub kind: MaskKind,
    #[arg(long)]
    pub width: usize,
    /// Defaults to the width.
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub af: usize,
    #[arg(long)]
    pub center_frac: Option<f64>,
    #[arg(long)]
    pub spokes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Number of synthetic receive coils; 1 means single-coil.
    #[arg(long, default_value_t = 1)]
    pub coils: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Measured k-space (one channel per coil); requires --mask.
    #[arg(long, requires = "mask")]
    pub kspace: Option<PathBuf>,
    #[arg(long, requires = "kspace")]
    pub mask: Option<PathBuf>,
    /// Ground truth for metrics; defaults to the configured phantom when
    /// the measurements are simulated.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Write the weights used for this run.
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
    /// Zero every decode head (the reconstruction equals zero filling).
    #[arg(long)]
    pub zero_decode: bool,
    /// Override the weight seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Directory of `unit_NNN_hidden.fld` / `unit_NNN_readout.fld` pairs.
    #[arg(long)]
    pub probes: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.35])]
    pub cutoffs: Vec<f64>,
    #[arg(long, default_value = "case")]
    pub case: String,
    #[arg(long, default_value = "so_mamba")]
    pub variant: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the image size from the config.
    #[arg(long)]
    pub size: Option<usize>,
    /// Run the variants on separate threads.
    #[arg(long)]
    pub parallel: bool,
}

/// Why a run stopped without an error value of its own.
pub enum Outcome {
    Ok,
    ChecksFailed,
}

fn out_file(explicit: Option<&PathBuf>, out_dir: &Path, name: &str) -> Result<PathBuf> {
    match explicit {
        Some(p) => {
            ensure_parent(p)?;
            Ok(p.clone())
        }
        None => {
            create_dir(out_dir)?;
            Ok(out_dir.join(name))
        }
    }
}

fn ensure_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => create_dir(d),
        _ => Ok(()),
    }
}

fn create_dir(d: &Path) -> Result<()> {
    std::fs::create_dir_all(d).map_err(|e| Error::Io {
        path: d.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn forward_config(mask: SampleMask, n_coils: usize) -> Result<ForwardConfig> {
    if n_coils == 1 {
        Ok(ForwardConfig::single_coil(mask))
    } else {
        let (h, w) = mask.dims();
        if h != w {
            return Err(Error::Config(format!("synthetic coil maps need a square grid, got {h}x{w}")));
        }
        ForwardConfig::multi_coil(mask, synth_coil_maps(n_coils, h)?)
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Phantom(a) => {
            let out = resolve_out_dir(cli.out_dir.as_deref(), None);
            let path = out_file(a.output.as_ref(), &out, "phantom.fld")?;
            write_field(&path, &FieldFile::from_complex(&make_phantom(a.kind, a.size, a.seed)?))?;
            println!("wrote {}", path.display());
        }
        Command::Mask(a) => {
            let out = resolve_out_dir(cli.out_dir.as_deref(), None);
            let mut spec = MaskSpec::new(a.kind, a.height.unwrap_or(a.width), a.width, a.af).with_seed(a.seed);
            spec.center_fraction = a.center_frac;
            spec.spokes = a.spokes;
            let mask = generate_mask(&spec)?;
            let path = out_file(a.output.as_ref(), &out, "mask.fld")?;
            write_field(&path, &FieldFile::from_mask(&mask))?;
            if mask.is_column_structured() {
                let cols: Vec<String> = mask.sampled_columns().iter().map(|c| c.to_string()).collect();
                println!("sampled columns: {}", cols.join(","));
            }
            println!("sampled fraction: {:.6}", mask.sampled_fraction());
            println!("wrote {}", path.display());
        }
        Command::Simulate(a) => {
            let out = resolve_out_dir(cli.out_dir.as_deref(), None);
            let image = read_field(&a.image)?.to_complex()?;
            let mask = read_field(&a.mask)?.to_mask()?;
            let fcfg = forward_config(mask, a.coils)?;
            let y = simulate(&image, &fcfg, a.noise_std, a.seed)?;
            let path = out_file(a.output.as_ref(), &out, "kspace.fld")?;
            write_field(&path, &FieldFile::from_complex_stack(y.coils())?)?;
            println!("wrote {}", path.display());
        }
        Command::Recon(a) => recon(a, cli.out_dir.as_deref())?,
        Command::Diagnose(a) => {
            let out = resolve_out_dir(cli.out_dir.as_deref(), None);
            let probes = read_probe_dir(&a.probes)?;
            let report = leakage_report(&probes, &a.cutoffs)?;
            let rows: Vec<ReportRow> = report
                .rows
                .iter()
                .map(|r| ReportRow::from_leakage(&a.case, &a.variant, r))
                .collect();
            create_dir(&out)?;
            write_text(&out.join("report.csv"), &report_csv(&rows))?;
            write_text(&out.join("report.json"), &(report_json(&rows) + "\n"))?;
            print!("{}", report_csv(&rows));
        }
        Command::Ablate(a) => {
            let cfg = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig {
                    size: 64,
                    random_modulation: true,
                    ..RunConfig::default()
                },
            };
            let out = resolve_out_dir(cli.out_dir.as_deref(), Some(&cfg));
            let mut setup = cfg.ablation_setup();
            if let Some(s) = a.size {
                setup.size = s;
            }
            let outcome = run_ablation_with(&setup, a.parallel)?;
            create_dir(&out)?;
            write_text(&out.join("report.csv"), &report_csv(&outcome.rows))?;
            write_text(&out.join("report.json"), &to_json(&outcome))?;
            print!("{}", report_csv(&outcome.rows));
            for m in &outcome.metrics {
                println!("{}: PSNR {:.4} dB, SSIM {:.4}", m.variant, m.psnr, m.ssim);
            }
            println!("zero-filled PSNR {:.4} dB", outcome.zero_filled_psnr);
        }
        Command::Selftest => {
            let results = run_selftest();
            let mut all = true;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                all &= r.passed;
            }
            if !all {
                return Ok(Outcome::ChecksFailed);
            }
        }
    }
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct ReconMetrics {
    psnr: Option<f64>,
    ssim: Option<f64>,
    zero_filled_psnr: Option<f64>,
    units: usize,
}

fn recon(a: ReconArgs, out_flag: Option<&Path>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    if let Some(w) = &a.weights {
        cfg.weights = Some(w.clone());
    }
    cfg.zero_decode |= a.zero_decode;
    let out = resolve_out_dir(out_flag, Some(&cfg));

    let (y, fcfg, mut truth) = match (&a.kspace, &a.mask) {
        (Some(k), Some(m)) => {
            let coils = read_field(k)?.to_complex_stack()?;
            let mask = read_field(m)?.to_mask()?;
            cfg.model.n_coils = coils.len();
            let fcfg = forward_config(mask.clone(), coils.len())?;
            (Measurements::new(coils, &mask)?, fcfg, None)
        }
        _ => {
            let truth = make_phantom(cfg.phantom, cfg.size, cfg.phantom_seed)?;
            let fcfg = forward_config(generate_mask(&cfg.mask_spec())?, cfg.model.n_coils)?;
            let y = simulate(&truth, &fcfg, cfg.noise_std, cfg.noise_seed)?;
            (y, fcfg, Some(truth))
        }
    };
    if let Some(t) = &a.truth {
        truth = Some(read_field(t)?.to_complex()?);
    }

    let model: &ModelConfig = &cfg.model;
    let weights = match &cfg.weights {
        Some(p) => {
            if cfg.zero_decode {
                return Err(Error::Usage("--zero-decode applies to seeded weights only".into()));
            }
            load_weights_for(p, model)?
        }
        None => init_weights_with(
            model,
            InitOptions {
                random_modulation: cfg.random_modulation,
                zero_decode: cfg.zero_decode,
            },
        )?,
    };
    if let Some(p) = &a.save_weights {
        ensure_parent(p)?;
        save_weights(&weights, p)?;
    }

    let rec = reconstruct(&y, &fcfg, &weights, model)?;
    let zf = adjoint(&fcfg, &y)?;
    let probe_dir = out.join("probes");
    create_dir(&probe_dir)?;
    write_field(out.join("x_hat.fld"), &FieldFile::from_complex(&rec.image))?;
    write_field(out.join("kspace_hat.fld"), &FieldFile::from_complex_stack(&rec.kspace)?)?;
    write_field(out.join("zero_filled.fld"), &FieldFile::from_complex(&zf))?;
    for (k, p) in rec.probes.iter().enumerate() {
        write_field(probe_dir.join(format!("unit_{k:03}_hidden.fld")), &p.hidden_grid.to_field_file())?;
        write_field(probe_dir.join(format!("unit_{k:03}_readout.fld")), &p.readout_grid.to_field_file())?;
    }

    let mut metrics = ReconMetrics {
        psnr: None,
        ssim: None,
        zero_filled_psnr: None,
        units: rec.probes.len(),
    };
    if let Some(t) = &truth {
        let reference = t.magnitude();
        let est = rec.image.magnitude();
        let (h, w) = t.dims();
        metrics.psnr = Some(psnr_auto(&reference, &est)?);
        metrics.ssim = Some(ssim(&reference, &est, h, w, &SsimParams::default())?);
        metrics.zero_filled_psnr = Some(psnr_auto(&reference, &zf.magnitude())?);
    }
    write_text(&out.join("metrics.json"), &to_json(&metrics))?;
    if let (Some(p), Some(s), Some(z)) = (metrics.psnr, metrics.ssim, metrics.zero_filled_psnr) {
        println!("PSNR {p:.6} dB, SSIM {s:.6}, zero-filled PSNR {z:.6} dB");
    }
    println!("wrote {} probes to {}", rec.probes.len(), probe_dir.display());
    Ok(())
}

fn read_probe_dir(dir: &Path) -> Result<Vec<UnitProbe>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut hidden: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("unit_") && n.ends_with("_hidden.fld"))
        })
        .collect();
    hidden.sort();
    if hidden.is_empty() {
        return Err(Error::Usage(format!("no unit_*_hidden.fld probes in {}", dir.display())));
    }
    hidden
        .iter()
        .map(|h| {
            let name = h.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let readout = h.with_file_name(name.replace("_hidden.fld", "_readout.fld"));
            Ok(UnitProbe {
                hidden_grid: ProbeGrid::from_field_file(&read_field(h)?)?,
                readout_grid: ProbeGrid::from_field_file(&read_field(&readout)?)?,
            })
        })
        .collect()
}
