//! Selective state-space core: per-token scan parameters, affine B/C interface
//! modulation, and the exponential-trapezoidal MIMO recurrence.
//!
//! Per head the state is a `d_state × m` matrix (`m = d_head / rank`). A token
//! slice `u_n` of width `d_head` is read as `U_n ∈ R^{rank × m}` and
//!
//! ```text
//! V_n = B'_n U_n
//! H_n = α_n H_{n-1} + β_n V_{n-1} + γ_n V_n,     H_0 = 0, V_0 = 0
//! Y_n = C'_nᵀ H_n
//! α = exp(ΔA),  β = (1 - λ) Δ exp(ΔA),  γ = λ Δ
//! ```
//!
//! [`selective_scan_sequential`] evaluates this literally and is the oracle for
//! [`selective_scan_chunked`], which folds `β V_{n-1} + γ V_n` into one input,
//! solves each chunk from a zero state with cumulative-decay weights, and then
//! carries the true state across chunk boundaries once per chunk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, sigmoid, softplus, Linear, Params};
use crate::rng::Prng;

/// RMS normalization floor used before the modulation projection.
pub const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsmConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub d_head: usize,
    pub rank: usize,
    pub chunk: usize,
    pub expand: usize,
    pub alpha_mu: f64,
    pub alpha_nu: f64,
    /// Raster order in which tokens are scanned.
    #[serde(default)]
    pub direction: ScanDirection,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanDirection {
    #[default]
    Forward,
    Reverse,
}

impl Default for SsmConfig {
    /// d_model 96, d_state 16, d_head 64, MIMO rank 4, chunk 16, expand 2.
    fn default() -> Self {
        Self {
            d_model: 96,
            d_state: 16,
            d_head: 64,
            rank: 4,
            chunk: 16,
            expand: 2,
            alpha_mu: 0.1,
            alpha_nu: 0.1,
            direction: ScanDirection::Forward,
        }
    }
}

impl SsmConfig {
    /// Token width after input expansion.
    pub fn d_inner(&self) -> usize {
        self.d_model * self.expand
    }

    pub fn heads(&self) -> usize {
        self.d_inner() / self.d_head.max(1)
    }

    /// Sub-channel width `m = d_head / rank`.
    pub fn sub_width(&self) -> usize {
        self.d_head / self.rank.max(1)
    }

    /// Flattened hidden-state width per token: `heads × d_state × m`.
    pub fn state_width(&self) -> usize {
        self.heads() * self.d_state * self.sub_width()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("d_state", self.d_state),
            ("d_head", self.d_head),
            ("rank", self.rank),
            ("chunk", self.chunk),
            ("expand", self.expand),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_head.is_multiple_of(self.rank) {
            return Err(Error::Config(format!(
                "d_head {} is not divisible by rank {}",
                self.d_head, self.rank
            )));
        }
        if !self.d_inner().is_multiple_of(self.d_head) {
            return Err(Error::Config(format!(
                "d_model*expand = {} is not a multiple of d_head {}",
                self.d_inner(),
                self.d_head
            )));
        }
        if !(self.alpha_mu >= 0.0 && self.alpha_nu >= 0.0 && self.alpha_mu.is_finite() && self.alpha_nu.is_finite()) {
            return Err(Error::Config("modulation strengths must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn interface_len(&self) -> usize {
        self.heads() * self.d_state * self.rank
    }
}

/// `len × width` token-major sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    pub len: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl TokenSeq {
    pub fn new(len: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != len * width {
            return Err(Error::Shape(format!(
                "token sequence {len}x{width} needs {} values, got {}",
                len * width,
                data.len()
            )));
        }
        Ok(Self { len, width, data })
    }

    pub fn token(&self, n: usize) -> &[f64] {
        &self.data[n * self.width..(n + 1) * self.width]
    }

    pub fn reversed(&self) -> TokenSeq {
        let mut data = Vec::with_capacity(self.data.len());
        for n in (0..self.len).rev() {
            data.extend_from_slice(self.token(n));
        }
        TokenSeq {
            len: self.len,
            width: self.width,
            data,
        }
    }

    /// Elementwise `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &TokenSeq, b: f64) -> Result<TokenSeq> {
        if self.len != other.len || self.width != other.width {
            return Err(Error::Shape("token sequences differ in shape".into()));
        }
        Ok(TokenSeq {
            len: self.len,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect(),
        })
    }
}

/// Per-token, per-head scan coefficients and interfaces.
///
/// `b`/`c` (and their modulated copies) are laid out `[token][head][state][rank]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    pub tokens: usize,
    pub heads: usize,
    pub d_state: usize,
    pub rank: usize,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub lambda: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub b_mod: Vec<f64>,
    pub c_mod: Vec<f64>,
}

impl SsmParams {
    fn check_layout(&self) -> Result<()> {
        let th = self.tokens * self.heads;
        let ti = th * self.d_state * self.rank;
        let ok = self.delta.len() == th
            && self.a.len() == th
            && self.lambda.len() == th
            && self.b.len() == ti
            && self.c.len() == ti
            && self.b_mod.len() == ti
            && self.c_mod.len() == ti;
        if !ok {
            return Err(Error::Shape("scan parameter arrays do not match their declared layout".into()));
        }
        Ok(())
    }

    /// Range checks on Δ, A and λ. `A = 0` and `λ ∈ {0, 1}` are admitted as
    /// closed boundaries; generated parameters are always strictly inside.
    pub fn check_domain(&self) -> Result<()> {
        self.check_layout()?;
        for (idx, ((&d, &a), &l)) in self.delta.iter().zip(&self.a).zip(&self.lambda).enumerate() {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Domain(format!("step {d} at index {idx} must be positive")));
            }
            if !(a.is_finite() && a <= 0.0) {
                return Err(Error::Domain(format!("transition {a} at index {idx} must be non-positive")));
            }
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Domain(format!("mixing coefficient {l} at index {idx} outside [0, 1]")));
            }
        }
        if self.b_mod.iter().chain(&self.c_mod).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite interface value".into()));
        }
        Ok(())
    }

    /// `(α, β, γ)` for token `n`, head `h`.
    pub fn coefficients(&self, n: usize, h: usize) -> (f64, f64, f64) {
        let i = n * self.heads + h;
        let (d, a, l) = (self.delta[i], self.a[i], self.lambda[i]);
        let alpha = (d * a).exp();
        (alpha, (1.0 - l) * d * alpha, l * d)
    }
}

/// Projections that produce the scan parameters from content tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanWeights {
    /// Δ pre-activation; its bias is the step bias.
    pub delta_proj: Linear,
    /// Per-head `A = -exp(a_log)`.
    pub a_log: Vec<f64>,
    pub lambda_proj: Linear,
    pub b_proj: Linear,
    pub c_proj: Linear,
}

impl ScanWeights {
    pub fn zeros(cfg: &SsmConfig) -> Self {
        let (d, h, i) = (cfg.d_inner(), cfg.heads(), cfg.interface_len());
        Self {
            delta_proj: Linear::zeros(d, h),
            a_log: vec![0.0; h],
            lambda_proj: Linear::zeros(d, h),
            b_proj: Linear::zeros(d, i),
            c_proj: Linear::zeros(d, i),
        }
    }

    pub fn uniform(cfg: &SsmConfig, rng: &mut Prng) -> Self {
        let (d, h, i) = (cfg.d_inner(), cfg.heads(), cfg.interface_len());
        Self {
            delta_proj: Linear::uniform(d, h, rng),
            a_log: vec![0.0; h],
            lambda_proj: Linear::uniform(d, h, rng),
            b_proj: Linear::uniform(d, i, rng),
            c_proj: Linear::uniform(d, i, rng),
        }
    }
}

impl Params for ScanWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.delta_proj.visit(&join(prefix, "delta_proj"), f);
        f(&join(prefix, "a_log"), &self.a_log);
        self.lambda_proj.visit(&join(prefix, "lambda_proj"), f);
        self.b_proj.visit(&join(prefix, "b_proj"), f);
        self.c_proj.visit(&join(prefix, "c_proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.delta_proj.visit_mut(&join(prefix, "delta_proj"), f);
        f(&join(prefix, "a_log"), &mut self.a_log);
        self.lambda_proj.visit_mut(&join(prefix, "lambda_proj"), f);
        self.b_proj.visit_mut(&join(prefix, "b_proj"), f);
        self.c_proj.visit_mut(&join(prefix, "c_proj"), f);
    }
}

/// Parameter-tying variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tying {
    /// Δ is driven by the same per-head scalar as A: `Δ = softplus(a_log)`.
    pub a_delta: bool,
    /// The read interface reuses the write interface: `C = B`.
    pub b_c: bool,
}

/// `M = P(RMSNorm(G))`, giving `[μ_B, ν_B, μ_C, ν_C]` (each `d_state` long) per head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationWeights {
    pub proj: Linear,
}

impl ModulationWeights {
    pub fn zeros(evidence_width: usize, cfg: &SsmConfig) -> Self {
        Self {
            proj: Linear::zeros(evidence_width, cfg.heads() * 4 * cfg.d_state),
        }
    }

    pub fn uniform(evidence_width: usize, cfg: &SsmConfig, rng: &mut Prng) -> Self {
        Self {
            proj: Linear::uniform(evidence_width, cfg.heads() * 4 * cfg.d_state, rng),
        }
    }
}

impl Params for ModulationWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

pub fn generate_ssm_params(tokens: &TokenSeq, w: &ScanWeights, cfg: &SsmConfig, tying: Tying) -> Result<SsmParams> {
    cfg.validate()?;
    if tokens.width != cfg.d_inner() {
        return Err(Error::Shape(format!(
            "tokens have width {}, scan expects d_model*expand = {}",
            tokens.width,
            cfg.d_inner()
        )));
    }
    if !w.all_finite() {
        return Err(Error::DataIntegrity("non-finite scan weights".into()));
    }
    let heads = cfg.heads();
    let n = tokens.len;

    let a_head: Vec<f64> = w.a_log.iter().map(|&l| -l.exp()).collect();
    let a = (0..n).flat_map(|_| a_head.iter().copied()).collect();

    let delta = if tying.a_delta {
        let tied: Vec<f64> = w.a_log.iter().map(|&l| softplus(l)).collect();
        (0..n).flat_map(|_| tied.iter().copied()).collect()
    } else {
        w.delta_proj.apply_rows(&tokens.data).into_iter().map(softplus).collect()
    };
    let lambda = w.lambda_proj.apply_rows(&tokens.data).into_iter().map(sigmoid).collect();
    let b = w.b_proj.apply_rows(&tokens.data);
    let c = if tying.b_c { b.clone() } else { w.c_proj.apply_rows(&tokens.data) };

    let params = SsmParams {
        tokens: n,
        heads,
        d_state: cfg.d_state,
        rank: cfg.rank,
        delta,
        a,
        lambda,
        b_mod: b.clone(),
        c_mod: c.clone(),
        b,
        c,
    };
    params.check_layout()?;
    Ok(params)
}

/// Per-token RMS normalization over channels.
fn rms_normalize(tokens: &TokenSeq) -> Vec<f64> {
    let mut out = tokens.data.clone();
    for row in out.chunks_exact_mut(tokens.width.max(1)) {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + NORM_EPS).sqrt();
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

/// Raw modulation vectors `M` for each evidence token: `tokens × heads × 4 × d_state`.
pub fn modulation_vectors(g_tokens: &TokenSeq, w: &ModulationWeights) -> Result<Vec<f64>> {
    if g_tokens.width != w.proj.in_dim {
        return Err(Error::Shape(format!(
            "evidence tokens have width {}, modulation projection expects {}",
            g_tokens.width, w.proj.in_dim
        )));
    }
    Ok(w.proj.apply_rows(&rms_normalize(g_tokens)))
}

/// `B' = B ⊙ (1 + α_μ tanh μ_B) + α_ν tanh ν_B`, likewise for `C'`, with the
/// per-state vectors broadcast over rank.
pub fn modulate_interfaces(params: &SsmParams, g_tokens: &TokenSeq, w: &ModulationWeights, cfg: &SsmConfig) -> Result<SsmParams> {
    if g_tokens.len != params.tokens {
        return Err(Error::Shape(format!(
            "{} evidence tokens for {} content tokens",
            g_tokens.len, params.tokens
        )));
    }
    if w.proj.out_dim != params.heads * 4 * params.d_state {
        return Err(Error::Shape("modulation projection width does not match heads*4*d_state".into()));
    }
    let m = modulation_vectors(g_tokens, w)?;
    let mut out = params.clone();
    apply_modulation(&mut out, &m, cfg.alpha_mu, cfg.alpha_nu);
    Ok(out)
}

fn apply_modulation(p: &mut SsmParams, m: &[f64], alpha_mu: f64, alpha_nu: f64) {
    let (ds, r) = (p.d_state, p.rank);
    for n in 0..p.tokens {
        for h in 0..p.heads {
            let mv = &m[(n * p.heads + h) * 4 * ds..(n * p.heads + h + 1) * 4 * ds];
            let (mu_b, nu_b, mu_c, nu_c) = (&mv[..ds], &mv[ds..2 * ds], &mv[2 * ds..3 * ds], &mv[3 * ds..]);
            let base = (n * p.heads + h) * ds * r;
            for s in 0..ds {
                let (gb, ob) = (1.0 + alpha_mu * mu_b[s].tanh(), alpha_nu * nu_b[s].tanh());
                let (gc, oc) = (1.0 + alpha_mu * mu_c[s].tanh(), alpha_nu * nu_c[s].tanh());
                for k in 0..r {
                    let i = base + s * r + k;
                    p.b_mod[i] = p.b[i] * gb + ob;
                    p.c_mod[i] = p.c[i] * gc + oc;
                }
            }
        }
    }
}

/// State trajectory and readout of a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    pub tokens: usize,
    pub heads: usize,
    pub d_state: usize,
    pub sub_width: usize,
    /// `[token][head][state][sub]`.
    pub states: Vec<f64>,
    /// `[token][head·d_head]`.
    pub readout: Vec<f64>,
}

impl ScanOutput {
    pub fn state_width(&self) -> usize {
        self.heads * self.d_state * self.sub_width
    }

    pub fn readout_width(&self) -> usize {
        self.readout.len() / self.tokens.max(1)
    }

    pub fn max_abs_diff(&self, other: &ScanOutput) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .chain(self.readout.iter().zip(&other.readout))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

struct ScanShape {
    n: usize,
    heads: usize,
    ds: usize,
    r: usize,
    m: usize,
    d_head: usize,
}

fn scan_shape(u: &TokenSeq, p: &SsmParams, cfg: &SsmConfig) -> Result<ScanShape> {
    cfg.validate()?;
    p.check_domain()?;
    if p.heads != cfg.heads() || p.d_state != cfg.d_state || p.rank != cfg.rank {
        return Err(Error::Shape("scan parameters do not match the configuration".into()));
    }
    if u.len != p.tokens {
        return Err(Error::Shape(format!("{} tokens for {} parameter rows", u.len, p.tokens)));
    }
    if u.width != cfg.heads() * cfg.d_head {
        return Err(Error::Shape(format!(
            "token width {} differs from heads*d_head = {}",
            u.width,
            cfg.heads() * cfg.d_head
        )));
    }
    Ok(ScanShape {
        n: u.len,
        heads: cfg.heads(),
        ds: cfg.d_state,
        r: cfg.rank,
        m: cfg.sub_width(),
        d_head: cfg.d_head,
    })
}

/// `V = B' U` for token `n`, head `h`, written into `v` (`d_state × m`).
fn write_input(u: &TokenSeq, p: &SsmParams, s: &ScanShape, n: usize, h: usize, v: &mut [f64]) {
    let uu = &u.token(n)[h * s.d_head..(h + 1) * s.d_head];
    let b = &p.b_mod[(n * s.heads + h) * s.ds * s.r..(n * s.heads + h + 1) * s.ds * s.r];
    v.iter_mut().for_each(|x| *x = 0.0);
    for st in 0..s.ds {
        let row = &mut v[st * s.m..(st + 1) * s.m];
        for k in 0..s.r {
            let bk = b[st * s.r + k];
            for (x, &ui) in row.iter_mut().zip(&uu[k * s.m..(k + 1) * s.m]) {
                *x += bk * ui;
            }
        }
    }
}

/// `Y = C'ᵀ H` for token `n`, head `h`, written into `y` (`rank × m`).
fn read_state(p: &SsmParams, s: &ScanShape, n: usize, h: usize, state: &[f64], y: &mut [f64]) {
    let c = &p.c_mod[(n * s.heads + h) * s.ds * s.r..(n * s.heads + h + 1) * s.ds * s.r];
    y.iter_mut().for_each(|x| *x = 0.0);
    for k in 0..s.r {
        let out = &mut y[k * s.m..(k + 1) * s.m];
        for st in 0..s.ds {
            let ck = c[st * s.r + k];
            for (x, &hv) in out.iter_mut().zip(&state[st * s.m..(st + 1) * s.m]) {
                *x += ck * hv;
            }
        }
    }
}

/// Token-by-token evaluation of the recurrence.
pub fn selective_scan_sequential(u: &TokenSeq, params: &SsmParams, cfg: &SsmConfig) -> Result<ScanOutput> {
    let s = scan_shape(u, params, cfg)?;
    let sw = s.ds * s.m;
    let mut states = vec![0.0; s.n * s.heads * sw];
    let mut readout = vec![0.0; s.n * s.heads * s.d_head];
    let mut v_prev = vec![0.0; sw];
    let mut v_cur = vec![0.0; sw];
    let mut hstate = vec![0.0; sw];
    for h in 0..s.heads {
        v_prev.iter_mut().for_each(|x| *x = 0.0);
        hstate.iter_mut().for_each(|x| *x = 0.0);
        for n in 0..s.n {
            write_input(u, params, &s, n, h, &mut v_cur);
            let (alpha, beta, gamma) = params.coefficients(n, h);
            for ((x, &vp), &vc) in hstate.iter_mut().zip(&v_prev).zip(&v_cur) {
                *x = alpha * *x + beta * vp + gamma * vc;
            }
            let off = (n * s.heads + h) * sw;
            states[off..off + sw].copy_from_slice(&hstate);
            let roff = n * s.heads * s.d_head + h * s.d_head;
            read_state(params, &s, n, h, &hstate, &mut readout[roff..roff + s.d_head]);
            std::mem::swap(&mut v_prev, &mut v_cur);
        }
    }
    Ok(ScanOutput {
        tokens: s.n,
        heads: s.heads,
        d_state: s.ds,
        sub_width: s.m,
        states,
        readout,
    })
}

/// Chunk-wise evaluation; mathematically identical to the sequential scan.
pub fn selective_scan_chunked(u: &TokenSeq, params: &SsmParams, cfg: &SsmConfig) -> Result<ScanOutput> {
    if cfg.chunk < 1 {
        return Err(Error::Config("chunk size must be at least 1".into()));
    }
    let s = scan_shape(u, params, cfg)?;
    let sw = s.ds * s.m;
    let chunk = cfg.chunk;
    let mut states = vec![0.0; s.n * s.heads * sw];
    let mut readout = vec![0.0; s.n * s.heads * s.d_head];

    let mut v = vec![0.0; s.n * sw];
    let mut w_in = vec![0.0; s.n * sw];
    let mut log_decay = vec![0.0; s.n];
    let mut local = vec![0.0; chunk * sw];
    let mut cum = vec![0.0; chunk];
    let mut carry = vec![0.0; sw];

    for h in 0..s.heads {
        for n in 0..s.n {
            write_input(u, params, &s, n, h, &mut v[n * sw..(n + 1) * sw]);
            let i = n * s.heads + h;
            log_decay[n] = params.delta[i] * params.a[i];
        }
        // Fold the trapezoidal pair into a single per-token input.
        for n in 0..s.n {
            let (_, beta, gamma) = params.coefficients(n, h);
            let (cur, prev) = (n * sw, n.wrapping_sub(1).wrapping_mul(sw));
            for k in 0..sw {
                let vp = if n == 0 { 0.0 } else { v[prev + k] };
                w_in[cur + k] = beta * vp + gamma * v[cur + k];
            }
        }

        carry.iter_mut().for_each(|x| *x = 0.0);
        let mut start = 0;
        while start < s.n {
            let len = chunk.min(s.n - start);
            let mut acc = 0.0;
            for t in 0..len {
                acc += log_decay[start + t];
                cum[t] = acc;
            }
            // Intra-chunk states from a zero initial state:
            // L_t = Σ_{j ≤ t} exp(cum_t - cum_j) w_j.
            for t in 0..len {
                let dst = &mut local[t * sw..(t + 1) * sw];
                dst.iter_mut().for_each(|x| *x = 0.0);
                for j in 0..=t {
                    let wt = (cum[t] - cum[j]).exp();
                    let src = &w_in[(start + j) * sw..(start + j + 1) * sw];
                    for (x, &y) in dst.iter_mut().zip(src) {
                        *x += wt * y;
                    }
                }
            }
            // Inter-chunk: add the decayed carried state, then update the carry.
            for t in 0..len {
                let decay = cum[t].exp();
                let n = start + t;
                let off = (n * s.heads + h) * sw;
                let dst = &mut states[off..off + sw];
                for ((x, &l), &c) in dst.iter_mut().zip(&local[t * sw..(t + 1) * sw]).zip(&carry) {
                    *x = l + decay * c;
                }
            }
            let last = ((start + len - 1) * s.heads + h) * sw;
            carry.copy_from_slice(&states[last..last + sw]);
            start += len;
        }

        for n in 0..s.n {
            let off = (n * s.heads + h) * sw;
            let roff = n * s.heads * s.d_head + h * s.d_head;
            let (st, ro) = (&states[off..off + sw], &mut readout[roff..roff + s.d_head]);
            read_state(params, &s, n, h, st, ro);
        }
    }
    Ok(ScanOutput {
        tokens: s.n,
        heads: s.heads,
        d_state: s.ds,
        sub_width: s.m,
        states,
        readout,
    })
}

/// Random tokens and in-domain coefficients for scan testing: `Δ ∈ [0.01, 1.5)`,
/// `A ∈ (-2, -0.05]`, `λ ∈ [0, 1)`, interfaces and tokens in `[-1, 1)`.
pub fn random_scan_problem(cfg: &SsmConfig, n: usize, rng: &mut Prng) -> (TokenSeq, SsmParams) {
    use rand::Rng;
    let heads = cfg.heads();
    let il = n * heads * cfg.d_state * cfg.rank;
    let b: Vec<f64> = (0..il).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..il).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p = SsmParams {
        tokens: n,
        heads,
        d_state: cfg.d_state,
        rank: cfg.rank,
        delta: (0..n * heads).map(|_| rng.gen_range(0.01..1.5)).collect(),
        a: (0..n * heads).map(|_| -rng.gen_range(0.05..2.0)).collect(),
        lambda: (0..n * heads).map(|_| rng.gen_range(0.0..1.0)).collect(),
        b_mod: b.clone(),
        c_mod: c.clone(),
        b,
        c,
    };
    let width = heads * cfg.d_head;
    let u = TokenSeq {
        len: n,
        width,
        data: (0..n * width).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    (u, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn siso() -> SsmConfig {
        SsmConfig {
            d_model: 1,
            d_state: 1,
            d_head: 1,
            rank: 1,
            chunk: 1,
            expand: 1,
            alpha_mu: 0.0,
            alpha_nu: 0.0,
            direction: ScanDirection::Forward,
        }
    }

    fn siso_params(n: usize, delta: f64, a: f64, lambda: f64) -> SsmParams {
        SsmParams {
            tokens: n,
            heads: 1,
            d_state: 1,
            rank: 1,
            delta: vec![delta; n],
            a: vec![a; n],
            lambda: vec![lambda; n],
            b: vec![1.0; n],
            c: vec![1.0; n],
            b_mod: vec![1.0; n],
            c_mod: vec![1.0; n],
        }
    }

    #[test]
    fn siso_hand_example() {
        let cfg = siso();
        let u = TokenSeq::new(2, 1, vec![1.0, 0.0]).unwrap();
        let p = siso_params(2, 1.0, 0.0, 0.5);
        let seq = selective_scan_sequential(&u, &p, &cfg).unwrap();
        assert_eq!(seq.states, vec![0.5, 1.0]);
        assert_eq!(seq.readout, vec![0.5, 1.0]);
        let chunked = selective_scan_chunked(&u, &p, &SsmConfig { chunk: 2, ..cfg }).unwrap();
        assert_eq!(chunked.states, vec![0.5, 1.0]);
    }

    #[test]
    fn lambda_one_uses_only_current_input() {
        let cfg = siso();
        let u = TokenSeq::new(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let p = siso_params(3, 0.5, -1.0, 1.0);
        let out = selective_scan_sequential(&u, &p, &cfg).unwrap();
        let alpha = (-0.5f64).exp();
        let expect = [0.5, 0.5 * alpha, 0.5 * alpha * alpha];
        for (a, b) in out.states.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_gives_zero_trajectory() {
        let cfg = SsmConfig::default();
        let mut rng = seeded(1);
        let (u, p) = random_scan_problem(&cfg, 40, &mut rng);
        let zero = TokenSeq::new(u.len, u.width, vec![0.0; u.data.len()]).unwrap();
        let out = selective_scan_chunked(&zero, &p, &cfg).unwrap();
        assert!(out.states.iter().chain(&out.readout).all(|&v| v == 0.0));
    }

    #[test]
    fn chunked_matches_sequential_for_degenerate_chunks() {
        let base = SsmConfig::default();
        let mut rng = seeded(2);
        let (u, p) = random_scan_problem(&base, 50, &mut rng);
        let seq = selective_scan_sequential(&u, &p, &base).unwrap();
        for chunk in [1, 2, 16, 50, 64] {
            let out = selective_scan_chunked(&u, &p, &SsmConfig { chunk, ..base.clone() }).unwrap();
            assert!(out.max_abs_diff(&seq) < 1e-12, "chunk {chunk}");
        }
    }

    #[test]
    fn domain_errors() {
        let cfg = siso();
        let u = TokenSeq::new(1, 1, vec![1.0]).unwrap();
        for p in [
            siso_params(1, 0.0, -1.0, 0.5),
            siso_params(1, 1.0, 0.5, 0.5),
            siso_params(1, 1.0, -1.0, 1.5),
        ] {
            assert!(matches!(selective_scan_sequential(&u, &p, &cfg), Err(Error::Domain(_))));
            assert!(matches!(selective_scan_chunked(&u, &p, &cfg), Err(Error::Domain(_))));
        }
        let bad = SsmConfig { chunk: 0, ..siso() };
        assert!(matches!(
            selective_scan_chunked(&u, &siso_params(1, 1.0, -1.0, 0.5), &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn generation_parameterization() {
        let cfg = SsmConfig::default();
        let w = ScanWeights::zeros(&cfg);
        let u = TokenSeq::new(3, cfg.d_inner(), vec![0.3; 3 * cfg.d_inner()]).unwrap();
        let p = generate_ssm_params(&u, &w, &cfg, Tying::default()).unwrap();
        assert!(p.a.iter().all(|&a| a == -1.0));
        assert!(p.lambda.iter().all(|&l| l == 0.5));
        assert!(p.delta.iter().all(|&d| (d - 2f64.ln()).abs() < 1e-15));

        let mut w = ScanWeights::zeros(&cfg);
        w.delta_proj.weight[0] = 1.0;
        let mut prev = 0.0;
        for x in [-3.0, -1.0, 0.0, 2.0, 10.0] {
            let mut data = vec![0.0; cfg.d_inner()];
            data[0] = x;
            let u = TokenSeq::new(1, cfg.d_inner(), data).unwrap();
            let d = generate_ssm_params(&u, &w, &cfg, Tying::default()).unwrap().delta[0];
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn tying_switches() {
        let cfg = SsmConfig::default();
        let mut rng = seeded(5);
        let mut w = ScanWeights::uniform(&cfg, &mut rng);
        w.a_log = vec![0.2, -0.4, 0.9];
        let u = TokenSeq::new(4, cfg.d_inner(), (0..4 * cfg.d_inner()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let tied = generate_ssm_params(&u, &w, &cfg, Tying { a_delta: true, b_c: true }).unwrap();
        for n in 0..4 {
            for h in 0..3 {
                assert_eq!(tied.delta[n * 3 + h], softplus(w.a_log[h]));
            }
        }
        assert_eq!(tied.b, tied.c);
        let free = generate_ssm_params(&u, &w, &cfg, Tying::default()).unwrap();
        assert_ne!(free.b, free.c);
        assert_ne!(free.delta, tied.delta);
    }

    #[test]
    fn zero_modulation_is_identity() {
        let cfg = SsmConfig::default();
        let mut rng = seeded(6);
        let (u, p) = random_scan_problem(&cfg, 8, &mut rng);
        let g = TokenSeq::new(8, 48, (0..8 * 48).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let m = modulate_interfaces(&p, &g, &ModulationWeights::zeros(48, &cfg), &cfg).unwrap();
        assert_eq!(m.b_mod, p.b);
        assert_eq!(m.c_mod, p.c);
        let a = selective_scan_chunked(&u, &p, &cfg).unwrap();
        let b = selective_scan_chunked(&u, &m, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn saturated_modulation_limit() {
        let mut p = siso_params(1, 1.0, -1.0, 0.5);
        let m = [1e6, 1e6, 0.0, 0.0];
        apply_modulation(&mut p, &m, 0.1, 0.1);
        assert!((p.b_mod[0] - 1.2).abs() < 1e-12);
        assert_eq!(p.c_mod[0], 1.0);
    }

    #[test]
    fn modulation_token_mismatch() {
        let cfg = SsmConfig::default();
        let mut rng = seeded(7);
        let (_, p) = random_scan_problem(&cfg, 8, &mut rng);
        let g = TokenSeq::new(7, 48, vec![0.0; 7 * 48]).unwrap();
        assert!(matches!(
            modulate_interfaces(&p, &g, &ModulationWeights::zeros(48, &cfg), &cfg),
            Err(Error::Shape(_))
        ));
    }
}
