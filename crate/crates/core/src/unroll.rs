//! Unrolled reconstruction: `x₀ = A^H y`, then per group two units each add a
//! decoded residual `Ψ(Y)` to the iterate, followed by one data-consistency
//! projection. Nothing but the image iterate crosses a unit boundary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, FeatureMap, Fft2Plan};
use crate::forward::{adjoint, consistent_kspace, CoilMode, DcMode, ForwardConfig, Measurements};
use crate::nn::{Linear, Params};
use crate::rng::derived;
use crate::router::extract_features;
use crate::ssm::{ModulationWeights, SsmConfig};
use crate::unit::{so_unit_forward, AblationSwitches, UnitProbe, UnitWeights};

pub const WEIGHTS_MAGIC: &str = "SOMAMBA-WEIGHTS";
pub const WEIGHTS_VERSION: u32 = 1;

/// Where the residual `x + Ψ(·)` is taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// Every unit re-extracts features from the current image and adds its own
    /// decoded update.
    #[default]
    PerUnit,
    /// Units of a group are chained in feature space; the first unit's
    /// extractor and the last unit's decoder form one residual per group.
    PerGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub groups: usize,
    pub units_per_group: usize,
    pub ssm: SsmConfig,
    #[serde(default)]
    pub dc_mode: DcMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub n_coils: usize,
    /// Reuse one group's unit weights in every group.
    #[serde(default)]
    pub share_weights: bool,
    #[serde(default)]
    pub residual: ResidualMode,
    /// Apply DC after every unit instead of once per group.
    #[serde(default)]
    pub dc_per_unit: bool,
    #[serde(default)]
    pub switches: AblationSwitches,
}

fn one() -> usize {
    1
}

impl Default for ModelConfig {
    /// Six groups of two units, hard DC, single coil.
    fn default() -> Self {
        Self {
            groups: 6,
            units_per_group: 2,
            ssm: SsmConfig::default(),
            dc_mode: DcMode::Hard,
            seed: 0,
            n_coils: 1,
            share_weights: false,
            residual: ResidualMode::PerUnit,
            dc_per_unit: false,
            switches: AblationSwitches::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups < 1 || self.units_per_group < 1 {
            return Err(Error::Config("groups and units_per_group must be at least 1".into()));
        }
        if self.n_coils < 1 {
            return Err(Error::Config("n_coils must be at least 1".into()));
        }
        if self.dc_per_unit && self.residual == ResidualMode::PerGroup {
            return Err(Error::Config("dc_per_unit needs per-unit residuals".into()));
        }
        self.ssm.validate()?;
        if !self.ssm.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!("d_model {} must be even", self.ssm.d_model)));
        }
        self.switches.validate()
    }

    pub fn total_units(&self) -> usize {
        self.groups * self.units_per_group
    }

    /// Number of distinct weight sets.
    pub fn stored_units(&self) -> usize {
        if self.share_weights {
            self.units_per_group
        } else {
            self.total_units()
        }
    }

    fn weight_index(&self, group: usize, unit: usize) -> usize {
        if self.share_weights {
            unit
        } else {
            group * self.units_per_group + unit
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub seed: u64,
    pub units: Vec<UnitWeights>,
}

impl ModelWeights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            config: cfg.clone(),
            seed: cfg.seed,
            units: (0..cfg.stored_units()).map(|_| UnitWeights::zeros(&cfg.ssm, cfg.n_coils)).collect(),
        }
    }

    pub fn unit(&self, group: usize, unit: usize) -> &UnitWeights {
        &self.units[self.config.weight_index(group, unit)]
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.units.len() != cfg.stored_units() {
            return Err(Error::Config(format!(
                "weights hold {} units, configuration needs {}",
                self.units.len(),
                cfg.stored_units()
            )));
        }
        if !self.all_finite() {
            return Err(Error::DataIntegrity("non-finite model weights".into()));
        }
        Ok(())
    }
}

impl Params for ModelWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (k, u) in self.units.iter().enumerate() {
            u.visit(&crate::nn::join(prefix, &format!("unit{k}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (k, u) in self.units.iter_mut().enumerate() {
            u.visit_mut(&crate::nn::join(prefix, &format!("unit{k}")), f);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InitOptions {
    /// Draw the modulation projection like any other linear map instead of
    /// starting at the modulation identity.
    pub random_modulation: bool,
    /// Zero every decode head, making each unit's update exactly zero.
    pub zero_decode: bool,
}

pub fn init_weights(cfg: &ModelConfig) -> Result<ModelWeights> {
    init_weights_with(cfg, InitOptions::default())
}

/// Seeded initialization; unit `k` draws from its own ChaCha stream so adding
/// units never perturbs earlier ones.
pub fn init_weights_with(cfg: &ModelConfig, opts: InitOptions) -> Result<ModelWeights> {
    cfg.validate()?;
    let units = (0..cfg.stored_units())
        .map(|k| {
            let mut rng = derived(cfg.seed, k as u64);
            let mut u = UnitWeights::uniform(&cfg.ssm, cfg.n_coils, &mut rng);
            if opts.random_modulation {
                u.modulation = ModulationWeights::uniform(cfg.ssm.d_model / 2, &cfg.ssm, &mut rng);
            }
            if opts.zero_decode {
                u.decode = Linear::zeros(cfg.ssm.d_model, 2 * cfg.n_coils);
            }
            u
        })
        .collect();
    Ok(ModelWeights {
        config: cfg.clone(),
        seed: cfg.seed,
        units,
    })
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: ComplexField,
    /// Coil k-space of the final iterate, sampled bins equal to `y`.
    pub kspace: Vec<ComplexField>,
    /// One probe per unit application, in execution order.
    pub probes: Vec<UnitProbe>,
}

fn network_input(x: &ComplexField, cfg_f: &ForwardConfig) -> Result<FeatureMap> {
    FeatureMap::from_complex_channels(&cfg_f.coil_images(x)?)
}

/// `Σ_c conj(s_c) Δ_c` from the decoded `2·n_coils` channels.
fn decode_update(y: &FeatureMap, decode: &Linear, cfg_f: &ForwardConfig) -> Result<ComplexField> {
    let per_coil = decode.apply_channels(y)?.to_complex_channels()?;
    cfg_f.combine_coils(&per_coil)
}

fn is_zero(f: &ComplexField) -> bool {
    f.data().iter().all(|v| v.re == 0.0 && v.im == 0.0)
}

fn image_from_kspace(kspace: &[ComplexField], cfg_f: &ForwardConfig) -> Result<ComplexField> {
    let (h, w) = cfg_f.dims();
    let plan = Fft2Plan::new(h, w);
    let images = kspace
        .iter()
        .map(|k| {
            let mut d = k.data().to_vec();
            plan.inverse_inplace(&mut d);
            ComplexField::new(h, w, d)
        })
        .collect::<Result<Vec<_>>>()?;
    cfg_f.combine_coils(&images)
}

pub fn reconstruct(y: &Measurements, cfg_f: &ForwardConfig, w: &ModelWeights, cfg: &ModelConfig) -> Result<Reconstruction> {
    cfg.validate()?;
    w.check(cfg)?;
    if y.n_coils() != cfg_f.n_coils() || cfg.n_coils != cfg_f.n_coils() {
        return Err(Error::Shape(format!(
            "model expects {} coils, operator has {}, measurements have {}",
            cfg.n_coils,
            cfg_f.n_coils(),
            y.n_coils()
        )));
    }
    let mut x = adjoint(cfg_f, y)?;
    let (h, wd) = x.dims();
    if h % 2 != 0 || wd % 2 != 0 {
        return Err(Error::Shape(format!("reconstruction grid {h}x{wd} must have even sides")));
    }
    // The single-coil zero-filled image is already consistent: its k-space is y.
    let mut kspace = match cfg_f.mode() {
        CoilMode::SingleCoil => Some(y.coils().to_vec()),
        CoilMode::MultiCoil => None,
    };
    let mut probes = Vec::with_capacity(cfg.total_units());
    let sw = &cfg.switches;

    // Projecting an unchanged, already consistent iterate is the identity.
    let project = |x: &mut ComplexField, changed: bool, kspace: &mut Option<Vec<ComplexField>>| -> Result<()> {
        if changed || kspace.is_none() {
            let k = consistent_kspace(x, y, cfg_f, cfg.dc_mode)?;
            *x = image_from_kspace(&k, cfg_f)?;
            *kspace = Some(k);
        }
        Ok(())
    };

    for g in 0..cfg.groups {
        let mut changed = false;
        match cfg.residual {
            ResidualMode::PerUnit => {
                for j in 0..cfg.units_per_group {
                    let unit = w.unit(g, j);
                    let feats = extract_features(&network_input(&x, cfg_f)?, &unit.router)?;
                    let (out, probe) = so_unit_forward(&feats, unit, &cfg.ssm, sw)?;
                    probes.push(probe);
                    let dx = decode_update(&out, &unit.decode, cfg_f)?;
                    if !is_zero(&dx) {
                        x = x.add(&dx)?;
                        changed = true;
                    }
                    if cfg.dc_per_unit {
                        project(&mut x, changed, &mut kspace)?;
                        changed = false;
                    }
                }
            }
            ResidualMode::PerGroup => {
                let first = w.unit(g, 0);
                let mut feats = extract_features(&network_input(&x, cfg_f)?, &first.router)?;
                for j in 0..cfg.units_per_group {
                    let (out, probe) = so_unit_forward(&feats, w.unit(g, j), &cfg.ssm, sw)?;
                    probes.push(probe);
                    feats = out;
                }
                let last = w.unit(g, cfg.units_per_group - 1);
                let dx = decode_update(&feats, &last.decode, cfg_f)?;
                if !is_zero(&dx) {
                    x = x.add(&dx)?;
                    changed = true;
                }
            }
        }
        if !cfg.dc_per_unit {
            project(&mut x, changed, &mut kspace)?;
        }
    }
    Ok(Reconstruction {
        image: x,
        kspace: kspace.expect("at least one group ran or the start was consistent"),
        probes,
    })
}

/// Little-endian f32 payload behind a text manifest:
///
/// ```text
/// SOMAMBA-WEIGHTS
/// version 1
/// seed <u64>
/// config <json>
/// blocks <n>
/// block <name> <offset> <len>     (offsets and lengths in f32 elements)
/// payload <bytes>
/// end
/// ```
pub fn weights_to_bytes(w: &ModelWeights) -> Result<Vec<u8>> {
    let config = serde_json::to_string(&w.config).map_err(|e| Error::format("config", e.to_string()))?;
    let mut blocks = Vec::new();
    let mut payload = Vec::new();
    let mut bad = None;
    w.visit("", &mut |name, t| {
        blocks.push((name.to_string(), payload.len() / 4, t.len()));
        for &v in t {
            let s = v as f32;
            if s as f64 != v && bad.is_none() {
                bad = Some(name.to_string());
            }
            payload.extend_from_slice(&s.to_le_bytes());
        }
    });
    if let Some(name) = bad {
        return Err(Error::DataIntegrity(format!(
            "block {name} holds values that are not exactly representable in f32"
        )));
    }
    let mut out = format!(
        "{WEIGHTS_MAGIC}\nversion {WEIGHTS_VERSION}\nseed {}\nconfig {config}\nblocks {}\n",
        w.seed,
        blocks.len()
    );
    for (name, off, len) in &blocks {
        out.push_str(&format!("block {name} {off} {len}\n"));
    }
    out.push_str(&format!("payload {}\nend\n", payload.len()));
    let mut bytes = out.into_bytes();
    bytes.extend_from_slice(&payload);
    Ok(bytes)
}

struct Manifest<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Manifest<'_> {
    fn line(&mut self, field: &str) -> Result<&str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(field, "manifest truncated"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::format(field, "manifest line is not UTF-8"))
    }

    fn keyed(&mut self, key: &str) -> Result<&str> {
        let line = self.line(key)?;
        line.strip_prefix(key)
            .and_then(|v| v.strip_prefix(' '))
            .ok_or_else(|| Error::format(key, format!("expected `{key} <value>`")))
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.keyed(key)?;
        v.parse().map_err(|_| Error::format(key, format!("cannot parse `{v}`")))
    }
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<ModelWeights> {
    let mut m = Manifest { bytes, pos: 0 };
    if m.line("magic")? != WEIGHTS_MAGIC {
        return Err(Error::format("magic", format!("file does not start with {WEIGHTS_MAGIC}")));
    }
    let version: u32 = m.number("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let seed: u64 = m.number("seed")?;
    let config: ModelConfig = serde_json::from_str(m.keyed("config")?).map_err(|e| Error::format("config", e.to_string()))?;
    config.validate().map_err(|e| Error::format("config", e.to_string()))?;
    let n_blocks: usize = m.number("blocks")?;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let line = m.keyed("block")?;
        let parts: Vec<&str> = line.split(' ').collect();
        let [name, off, len] = parts[..] else {
            return Err(Error::format("block", format!("malformed block entry `{line}`")));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(name, format!("bad offset/length `{s}`")))
        };
        blocks.push((name.to_string(), parse(off)?, parse(len)?));
    }
    let declared: usize = m.number("payload")?;
    if m.line("end")? != "end" {
        return Err(Error::format("end", "missing manifest terminator"));
    }
    let body = &bytes[m.pos..];
    if body.len() != declared {
        return Err(Error::format("payload", format!("declared {declared} bytes, found {}", body.len())));
    }

    let mut w = ModelWeights::zeros(&config);
    w.seed = seed;
    let mut idx = 0;
    let mut err = None;
    w.visit_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        let Some((bname, off, len)) = blocks.get(idx) else {
            err = Some(Error::format(name, "block missing from manifest"));
            return;
        };
        idx += 1;
        if bname != name || *len != t.len() {
            err = Some(Error::format(
                name,
                format!(
                    "manifest lists `{bname}` with {len} values, configuration expects {} values",
                    t.len()
                ),
            ));
            return;
        }
        let Some(src) = body.get(off * 4..(off + len) * 4) else {
            err = Some(Error::format(name, "block extends past the payload"));
            return;
        };
        for (dst, chunk) in t.iter_mut().zip(src.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if idx != blocks.len() {
        return Err(Error::format(&blocks[idx].0, "block not used by the configuration"));
    }
    if !w.all_finite() {
        return Err(Error::format("payload", "non-finite weight values"));
    }
    Ok(w)
}

pub fn save_weights(w: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, weights_to_bytes(w)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    weights_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Load and require the stored configuration to equal `expected`.
pub fn load_weights_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<ModelWeights> {
    let w = load_weights(path)?;
    if &w.config != expected {
        return Err(Error::format("config", "stored model configuration differs from the requested one"));
    }
    Ok(w)
}
