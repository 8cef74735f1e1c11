//! One ownership-aware unit: route features into carrier `L` and evidence `G`,
//! scan content tokens drawn from `L` alone, let `G` modulate the B/C
//! interfaces and pass through the non-state refinement outlet, then merge.
//!
//! ```text
//! X ──route──► L ──tokenize──► in_proj ──► u ──► scan ──► S ─┐
//!         └──► G ──RMSNorm·P──► (μ, ν) on B/C ──┘             ├─► W_o ─► Y
//!              G ──────────────── NSR ────────────────────────┘
//! ```
//!
//! The unit also owns its feature extractor (inside the router weights) and its
//! decode head `Ψ`; the unrolled cascade applies those around
//! [`so_unit_forward`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FeatureMap;
use crate::fieldio::{FieldFile, Payload};
use crate::nn::{join, sigmoid, Depthwise3x3, Linear, Params};
use crate::rng::Prng;
use crate::router::{route, OwnershipStreams, RouterWeights};
use crate::ssm::{
    generate_ssm_params, modulate_interfaces, selective_scan_chunked, ModulationWeights, ScanDirection, ScanOutput, ScanWeights, SsmConfig,
    TokenSeq, Tying,
};

/// Gate pre-activations are clamped so the sigmoid never rounds to 0 or 1.
const GATE_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSwitches {
    pub use_sor: bool,
    /// Feed `G` into the content tokens (the forbidden route).
    pub content_residency_violation: bool,
    pub state_access: bool,
    pub output_outlet: bool,
    pub tie_a_delta: bool,
    pub tie_b_c: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        Self {
            use_sor: true,
            content_residency_violation: false,
            state_access: true,
            output_outlet: true,
            tie_a_delta: false,
            tie_b_c: false,
        }
    }
}

impl AblationSwitches {
    /// Plain selective-scan regularizer: no router, tokens from all of `X`.
    pub fn plain() -> Self {
        Self {
            use_sor: false,
            state_access: false,
            output_outlet: false,
            ..Self::default()
        }
    }

    /// Router present, but evidence has neither interface access nor outlet.
    pub fn router_only() -> Self {
        Self {
            state_access: false,
            output_outlet: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_sor && (self.content_residency_violation || self.state_access || self.output_outlet) {
            return Err(Error::Config(
                "without the router there is no evidence stream: disable state_access, output_outlet and content_residency_violation"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn tying(&self) -> Tying {
        Tying {
            a_delta: self.tie_a_delta,
            b_c: self.tie_b_c,
        }
    }
}

/// Single-precision `C × H × W` grid used for probe storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ProbeGrid {
    /// Channel-major grid from token-major rows (`H·W × C`).
    pub fn from_token_rows(rows: &[f64], channels: usize, height: usize, width: usize) -> Result<Self> {
        let plane = height * width;
        if rows.len() != plane * channels {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {channels}x{height}x{width} grid",
                rows.len()
            )));
        }
        let mut data = vec![0f32; rows.len()];
        for (p, row) in rows.chunks_exact(channels).enumerate() {
            for (c, &v) in row.iter().enumerate() {
                data[c * plane + p] = v as f32;
            }
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Back to token-major rows, the inverse of [`ProbeGrid::from_token_rows`].
    pub fn to_token_rows(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut rows = vec![0f32; self.data.len()];
        for c in 0..self.channels {
            for p in 0..plane {
                rows[p * self.channels + c] = self.data[c * plane + p];
            }
        }
        rows
    }

    pub fn to_field_file(&self) -> FieldFile {
        FieldFile::new(self.channels, self.height, self.width, Payload::Float32(self.data.clone())).expect("probe grid shape is consistent")
    }

    pub fn from_field_file(f: &FieldFile) -> Result<Self> {
        let Payload::Float32(data) = &f.payload else {
            return Err(Error::format("kind", "probe grids are stored as float32"));
        };
        Ok(Self {
            channels: f.channels,
            height: f.height,
            width: f.width,
            data: data.clone(),
        })
    }
}

/// Hidden-state trajectory and pre-merge readout of one unit, as spatial grids.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitProbe {
    /// `heads·d_state·m` channels.
    pub hidden_grid: ProbeGrid,
    /// `d_model·expand` channels.
    pub readout_grid: ProbeGrid,
}

/// Non-state refinement: depthwise 3×3, pointwise mix, sigmoid gate from `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct NsrWeights {
    pub local: Depthwise3x3,
    pub mix: Linear,
    pub gate: Linear,
}

impl NsrWeights {
    pub fn zeros(channels: usize) -> Self {
        Self {
            local: Depthwise3x3::zeros(channels),
            mix: Linear::zeros(channels, channels),
            gate: Linear::zeros(channels, channels),
        }
    }

    pub fn uniform(channels: usize, rng: &mut Prng) -> Self {
        Self {
            local: Depthwise3x3::uniform(channels, rng),
            mix: Linear::uniform(channels, channels, rng),
            gate: Linear::uniform(channels, channels, rng),
        }
    }
}

impl Params for NsrWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.local.visit(&join(prefix, "local"), f);
        self.mix.visit(&join(prefix, "mix"), f);
        self.gate.visit(&join(prefix, "gate"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.local.visit_mut(&join(prefix, "local"), f);
        self.mix.visit_mut(&join(prefix, "mix"), f);
        self.gate.visit_mut(&join(prefix, "gate"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitWeights {
    /// Feature extractor `Φ` plus the role projections.
    pub router: RouterWeights,
    /// Fixed map from a full-width `d_model` grid to token width, used only by
    /// the residency-violation and router-free variants.
    pub wide_token_proj: Linear,
    /// Input expansion `d_model/2 → d_model·expand`.
    pub in_proj: Linear,
    pub scan: ScanWeights,
    pub modulation: ModulationWeights,
    pub nsr: NsrWeights,
    /// `W_o` over `[S; NSR(G)]`.
    pub merge: Linear,
    /// Decode head `Ψ`: `d_model → 2·n_coils`.
    pub decode: Linear,
}

impl UnitWeights {
    pub fn zeros(cfg: &SsmConfig, n_coils: usize) -> Self {
        let (d, half, inner) = (cfg.d_model, cfg.d_model / 2, cfg.d_inner());
        Self {
            router: RouterWeights::zeros(2 * n_coils, d),
            wide_token_proj: Linear::zeros(d, half),
            in_proj: Linear::zeros(half, inner),
            scan: ScanWeights::zeros(cfg),
            modulation: ModulationWeights::zeros(half, cfg),
            nsr: NsrWeights::zeros(half),
            merge: Linear::zeros(inner + half, d),
            decode: Linear::zeros(d, 2 * n_coils),
        }
    }

    /// Uniform `±1/√fan_in` weights, zero biases, zero modulation projection,
    /// zero `a_log`.
    pub fn uniform(cfg: &SsmConfig, n_coils: usize, rng: &mut Prng) -> Self {
        let (d, half, inner) = (cfg.d_model, cfg.d_model / 2, cfg.d_inner());
        Self {
            router: RouterWeights::uniform(2 * n_coils, d, rng),
            wide_token_proj: Linear::uniform(d, half, rng),
            in_proj: Linear::uniform(half, inner, rng),
            scan: ScanWeights::uniform(cfg, rng),
            modulation: ModulationWeights::zeros(half, cfg),
            nsr: NsrWeights::uniform(half, rng),
            merge: Linear::uniform(inner + half, d, rng),
            decode: Linear::uniform(d, 2 * n_coils, rng),
        }
    }

    pub fn n_coils(&self) -> usize {
        self.decode.out_dim / 2
    }
}

impl Params for UnitWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.router.visit(&join(prefix, "router"), f);
        self.wide_token_proj.visit(&join(prefix, "wide_token_proj"), f);
        self.in_proj.visit(&join(prefix, "in_proj"), f);
        self.scan.visit(&join(prefix, "scan"), f);
        self.modulation.visit(&join(prefix, "modulation"), f);
        self.nsr.visit(&join(prefix, "nsr"), f);
        self.merge.visit(&join(prefix, "merge"), f);
        self.decode.visit(&join(prefix, "decode"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.router.visit_mut(&join(prefix, "router"), f);
        self.wide_token_proj.visit_mut(&join(prefix, "wide_token_proj"), f);
        self.in_proj.visit_mut(&join(prefix, "in_proj"), f);
        self.scan.visit_mut(&join(prefix, "scan"), f);
        self.modulation.visit_mut(&join(prefix, "modulation"), f);
        self.nsr.visit_mut(&join(prefix, "nsr"), f);
        self.merge.visit_mut(&join(prefix, "merge"), f);
        self.decode.visit_mut(&join(prefix, "decode"), f);
    }
}

/// Raster tokens: pixel `(i, j)` becomes token `i·W + j`, its channel vector the token.
pub fn tokenize(map: &FeatureMap) -> TokenSeq {
    let (c, plane) = (map.channels(), map.plane_len());
    let mut data = vec![0.0; c * plane];
    for ch in 0..c {
        for (p, &v) in map.channel(ch).iter().enumerate() {
            data[p * c + ch] = v;
        }
    }
    TokenSeq {
        len: plane,
        width: c,
        data,
    }
}

pub fn detokenize(tokens: &TokenSeq, height: usize, width: usize) -> Result<FeatureMap> {
    if tokens.len != height * width {
        return Err(Error::Shape(format!("{} tokens do not tile a {height}x{width} grid", tokens.len)));
    }
    let (c, plane) = (tokens.width, tokens.len);
    let mut data = vec![0.0; c * plane];
    for (p, tok) in tokens.data.chunks_exact(c.max(1)).enumerate() {
        for (ch, &v) in tok.iter().enumerate() {
            data[ch * plane + p] = v;
        }
    }
    FeatureMap::new(c, height, width, data)
}

/// `mix(local(G)) ⊙ σ(gate(G))`.
pub fn nsr(g: &FeatureMap, w: &NsrWeights) -> Result<FeatureMap> {
    let refined = w.mix.apply_channels(&w.local.apply(g)?)?;
    let gate = w.gate.apply_channels(g)?;
    let data = refined
        .data()
        .iter()
        .zip(gate.data())
        .map(|(&r, &z)| r * sigmoid(z.clamp(-GATE_CLAMP, GATE_CLAMP)))
        .collect();
    FeatureMap::new(refined.channels(), refined.height(), refined.width(), data)
}

fn check_input(x: &FeatureMap, w: &UnitWeights, cfg: &SsmConfig, sw: &AblationSwitches) -> Result<()> {
    sw.validate()?;
    cfg.validate()?;
    if !cfg.d_model.is_multiple_of(2) {
        return Err(Error::Config(format!("d_model {} must be even", cfg.d_model)));
    }
    if x.channels() != cfg.d_model {
        return Err(Error::Shape(format!(
            "unit expects {} feature channels, got {}",
            cfg.d_model,
            x.channels()
        )));
    }
    if w.router.d_model() != cfg.d_model || w.in_proj.out_dim != cfg.d_inner() || w.merge.out_dim != cfg.d_model {
        return Err(Error::Config("unit weights were built for a different configuration".into()));
    }
    if !w.all_finite() {
        return Err(Error::DataIntegrity("non-finite unit weights".into()));
    }
    Ok(())
}

/// Content tokens `u` given the routed streams (or the raw features when the
/// router is off).
fn tokens_from(x: &FeatureMap, streams: Option<&OwnershipStreams>, w: &UnitWeights, sw: &AblationSwitches) -> Result<TokenSeq> {
    let source = match streams {
        None => w.wide_token_proj.apply_channels(x)?,
        Some(s) if sw.content_residency_violation => w.wide_token_proj.apply_channels(&s.carrier.concat(&s.evidence)?)?,
        Some(s) => s.carrier.clone(),
    };
    let raster = tokenize(&source);
    Ok(TokenSeq {
        len: raster.len,
        width: w.in_proj.out_dim,
        data: w.in_proj.apply_rows(&raster.data),
    })
}

/// The token sequence the scan consumes, exposed for ownership checks.
pub fn content_tokens(x: &FeatureMap, w: &UnitWeights, cfg: &SsmConfig, sw: &AblationSwitches) -> Result<TokenSeq> {
    check_input(x, w, cfg, sw)?;
    let streams = if sw.use_sor { Some(route(x, &w.router)?) } else { None };
    tokens_from(x, streams.as_ref(), w, sw)
}

fn scan_tokens(u: &TokenSeq, g: Option<&TokenSeq>, w: &UnitWeights, cfg: &SsmConfig, sw: &AblationSwitches) -> Result<ScanOutput> {
    let params = generate_ssm_params(u, &w.scan, cfg, sw.tying())?;
    let params = match g {
        Some(g) if sw.state_access => modulate_interfaces(&params, g, &w.modulation, cfg)?,
        _ => params,
    };
    selective_scan_chunked(u, &params, cfg)
}

fn reverse_rows(data: &[f64], width: usize) -> Vec<f64> {
    data.chunks_exact(width.max(1)).rev().flatten().copied().collect()
}

/// Full unit: `Y = W_o([S; NSR(G)])` with hidden-state and readout probes.
pub fn so_unit_forward(x: &FeatureMap, w: &UnitWeights, cfg: &SsmConfig, sw: &AblationSwitches) -> Result<(FeatureMap, UnitProbe)> {
    check_input(x, w, cfg, sw)?;
    let streams = if sw.use_sor { Some(route(x, &w.router)?) } else { None };
    forward_routed(x, streams.as_ref(), w, cfg, sw)
}

/// Unit body after routing; `streams` is `None` exactly when the router is off.
pub fn forward_routed(
    x: &FeatureMap,
    streams: Option<&OwnershipStreams>,
    w: &UnitWeights,
    cfg: &SsmConfig,
    sw: &AblationSwitches,
) -> Result<(FeatureMap, UnitProbe)> {
    check_input(x, w, cfg, sw)?;
    if streams.is_some() != sw.use_sor {
        return Err(Error::Config(
            "routed streams must be supplied exactly when the router is on".into(),
        ));
    }
    let (h, wd) = (x.height(), x.width());
    let u = tokens_from(x, streams, w, sw)?;
    let g_tokens = streams.map(|s| tokenize(&s.evidence));

    let scan = match cfg.direction {
        ScanDirection::Forward => scan_tokens(&u, g_tokens.as_ref(), w, cfg, sw)?,
        ScanDirection::Reverse => {
            let g_rev = g_tokens.as_ref().map(TokenSeq::reversed);
            let mut out = scan_tokens(&u.reversed(), g_rev.as_ref(), w, cfg, sw)?;
            out.states = reverse_rows(&out.states, out.state_width());
            let rw = out.readout_width();
            out.readout = reverse_rows(&out.readout, rw);
            out
        }
    };

    let probe = UnitProbe {
        hidden_grid: ProbeGrid::from_token_rows(&scan.states, scan.state_width(), h, wd)?,
        readout_grid: ProbeGrid::from_token_rows(&scan.readout, scan.readout_width(), h, wd)?,
    };
    let s_map = detokenize(
        &TokenSeq {
            len: scan.tokens,
            width: scan.readout_width(),
            data: scan.readout,
        },
        h,
        wd,
    )?;
    let half = cfg.d_model / 2;
    let outlet = match streams {
        Some(s) if sw.output_outlet => nsr(&s.evidence, &w.nsr)?,
        _ => FeatureMap::zeros(half, h, wd),
    };
    let y = w.merge.apply_channels(&s_map.concat(&outlet)?)?;
    Ok((y, probe))
}
