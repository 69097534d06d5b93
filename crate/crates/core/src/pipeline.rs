//! Desk-scale denoising pipeline: a stack of transformer-like blocks with
//! seeded fixed weights, a deterministic reverse-process sampler, and the
//! forward noising map.
//!
//! Each block contributes two cacheable modules, an attention-like mixer
//! and a two-layer MLP. A cheap pre-op (row normalization plus
//! timestep-conditioned scale/shift) produces each module's input; the
//! expensive op produces its output; the caller adds the residual.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::feature::FeatureVec;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Noise-schedule family for the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaScheduleKind {
    Linear,
    Cosine,
}

impl AlphaScheduleKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(AlphaScheduleKind::Linear),
            "cosine" => Ok(AlphaScheduleKind::Cosine),
            _ => Err(Error::InvalidConfig(format!(
                "unknown alpha schedule '{}'",
                s
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AlphaScheduleKind::Linear => "linear",
            AlphaScheduleKind::Cosine => "cosine",
        }
    }
}

/// Monotone noise schedule over `t = 0..=T`, values in `(0, 1]` with
/// `alpha(0) = 1`.
#[derive(Debug, Clone)]
pub struct AlphaSchedule {
    alphas: Vec<f64>,
}

impl AlphaSchedule {
    pub fn build(kind: AlphaScheduleKind, t_steps: usize) -> Self {
        let t_max = t_steps as f64;
        let alphas = match kind {
            AlphaScheduleKind::Linear => (0..=t_steps)
                .map(|t| 1.0 - 0.95 * (t as f64 / t_max))
                .collect(),
            AlphaScheduleKind::Cosine => {
                let s = 0.008;
                let f = |t: f64| {
                    let angle = ((t / t_max + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
                    angle.cos().powi(2)
                };
                let f0 = f(0.0);
                (0..=t_steps)
                    .map(|t| (f(t as f64) / f0).max(1e-4))
                    .collect()
            }
        };
        Self { alphas }
    }

    pub fn alpha(&self, t: i64) -> f64 {
        self.alphas[t as usize]
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

/// Forward noising: `sqrt(alpha_t) * x0 + sqrt(1 - alpha_t) * noise`.
pub fn forward_noise(
    x0: &FeatureVec,
    t: i64,
    schedule: &AlphaSchedule,
    noise: &FeatureVec,
) -> Result<FeatureVec> {
    x0.check_same_shape(noise)?;
    let alpha = schedule.alpha(t);
    let a = alpha.sqrt();
    let b = (1.0 - alpha).sqrt();
    let data = x0
        .data()
        .iter()
        .zip(noise.data())
        .map(|(x, n)| a * x + b * n)
        .collect();
    Ok(FeatureVec::unchecked(data, x0.shape().to_vec()))
}

/// One deterministic reverse step: reconstructs the clean estimate from the
/// predicted noise and re-noises it at level `t - 1`.
pub fn ddim_step(
    x_t: &FeatureVec,
    eps_pred: &FeatureVec,
    t: i64,
    schedule: &AlphaSchedule,
) -> Result<FeatureVec> {
    assert!(t >= 1, "reverse step needs t >= 1");
    x_t.check_same_shape(eps_pred)?;
    let alpha_t = schedule.alpha(t);
    let alpha_prev = schedule.alpha(t - 1);
    let sa_t = alpha_t.sqrt();
    let sb_t = (1.0 - alpha_t).sqrt();
    let sa_prev = alpha_prev.sqrt();
    let sb_prev = (1.0 - alpha_prev).sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(eps_pred.data())
        .map(|(x, e)| sa_prev * ((x - sb_t * e) / sa_t) + sb_prev * e)
        .collect();
    Ok(FeatureVec::unchecked(data, x_t.shape().to_vec()))
}

/// Dense row-major matrix, the only weight container the toy stack needs.
#[derive(Debug, Clone)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn seeded(rows: usize, cols: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, sigma).expect("finite sigma");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `out[r][c] = sum_k lhs[r][k] * self[k][c]` for row-major `lhs` with
    /// `n_rows` rows of width `self.rows`.
    fn apply_rows(&self, lhs: &[f64], n_rows: usize) -> Vec<f64> {
        debug_assert_eq!(lhs.len(), n_rows * self.rows);
        let mut out = vec![0.0; n_rows * self.cols];
        for r in 0..n_rows {
            let row = &lhs[r * self.rows..(r + 1) * self.rows];
            let out_row = &mut out[r * self.cols..(r + 1) * self.cols];
            for (k, &x) in row.iter().enumerate() {
                let w_row = &self.data[k * self.cols..(k + 1) * self.cols];
                for (o, w) in out_row.iter_mut().zip(w_row) {
                    *o += x * w;
                }
            }
        }
        out
    }
}

/// Timestep-conditioned per-channel modulation: each channel evaluates
/// `amp * sin(freq * t + phase)`.
#[derive(Debug, Clone)]
pub struct ModTable {
    amp: Vec<f64>,
    freq: Vec<f64>,
    phase: Vec<f64>,
}

impl ModTable {
    fn seeded(width: usize, t_steps: usize, amp_range: (f64, f64), rng: &mut ChaCha8Rng) -> Self {
        let base = 2.0 * std::f64::consts::PI / t_steps as f64;
        Self {
            amp: (0..width)
                .map(|_| rng.gen_range(amp_range.0..amp_range.1))
                .collect(),
            freq: (0..width).map(|_| base * rng.gen_range(0.5..2.0)).collect(),
            phase: (0..width)
                .map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI))
                .collect(),
        }
    }

    fn constant(width: usize) -> Self {
        Self {
            amp: vec![0.0; width],
            freq: vec![0.0; width],
            phase: vec![0.0; width],
        }
    }

    fn eval(&self, channel: usize, t: i64) -> f64 {
        self.amp[channel] * (self.freq[channel] * t as f64 + self.phase[channel]).sin()
    }
}

/// Cheap pre-op parameters: base per-channel scale/shift plus their
/// timestep modulation.
#[derive(Debug, Clone)]
pub struct PreOpParams {
    pub scale_base: Vec<f64>,
    pub shift_base: Vec<f64>,
    scale_mod: ModTable,
    shift_mod: ModTable,
}

impl PreOpParams {
    fn seeded(width: usize, t_steps: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            scale_base: (0..width).map(|_| rng.gen_range(0.9..1.1)).collect(),
            shift_base: (0..width).map(|_| rng.gen_range(-0.05..0.05)).collect(),
            scale_mod: ModTable::seeded(width, t_steps, (0.05, 0.2), rng),
            shift_mod: ModTable::seeded(width, t_steps, (0.05, 0.2), rng),
        }
    }

    /// Uniform scale one, shift zero, no modulation; used by tests that
    /// need the bare row normalization.
    pub fn plain(width: usize) -> Self {
        Self {
            scale_base: vec![1.0; width],
            shift_base: vec![0.0; width],
            scale_mod: ModTable::constant(width),
            shift_mod: ModTable::constant(width),
        }
    }
}

/// Activation for the MLP path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Which expensive module of a block an operation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleKind {
    Attention,
    Mlp,
}

/// Fixed parameters of one block: a pre-op and expensive weights for each
/// of its two modules.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub attn_pre: PreOpParams,
    pub mlp_pre: PreOpParams,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub w1: Mat,
    pub w2: Mat,
    pub activation: Activation,
}

impl BlockParams {
    pub fn pre_op_params(&self, kind: ModuleKind) -> &PreOpParams {
        match kind {
            ModuleKind::Attention => &self.attn_pre,
            ModuleKind::Mlp => &self.mlp_pre,
        }
    }
}

/// Row normalization (per token) followed by timestep-conditioned scale and
/// shift; produces the module input fed to the expensive op.
pub fn block_pre_op(hidden: &FeatureVec, t: i64, pre: &PreOpParams) -> FeatureVec {
    let shape = hidden.shape();
    let width = *shape.last().expect("non-empty shape");
    let n_rows = hidden.len() / width;
    let mut out = Vec::with_capacity(hidden.len());
    for r in 0..n_rows {
        let row = &hidden.data()[r * width..(r + 1) * width];
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (c, v) in row.iter().enumerate() {
            let normed = (v - mean) * inv;
            let scale = pre.scale_base[c] + pre.scale_mod.eval(c, t);
            let shift = pre.shift_base[c] + pre.shift_mod.eval(c, t);
            out.push(normed * scale + shift);
        }
    }
    FeatureVec::unchecked(out, shape.to_vec())
}

/// The expensive op of one module: single-head attention over the token
/// rows, or a two-layer MLP applied per token. The caller adds the
/// residual; the returned value is what gets cached.
pub fn block_expensive_op(
    input: &FeatureVec,
    params: &BlockParams,
    kind: ModuleKind,
) -> Result<FeatureVec> {
    let shape = input.shape();
    let width = *shape.last().expect("non-empty shape");
    let n_rows = input.len() / width;
    match kind {
        ModuleKind::Attention => {
            if params.wq.rows != width {
                return Err(Error::ShapeMismatch(format!(
                    "attention weights expect width {}, input has {}",
                    params.wq.rows, width
                )));
            }
            let q = params.wq.apply_rows(input.data(), n_rows);
            let k = params.wk.apply_rows(input.data(), n_rows);
            let v = params.wv.apply_rows(input.data(), n_rows);
            let d = params.wq.cols;
            let scale = 1.0 / (d as f64).sqrt();
            let mut out = vec![0.0; n_rows * d];
            let mut logits = vec![0.0; n_rows];
            for i in 0..n_rows {
                let qi = &q[i * d..(i + 1) * d];
                let mut max_logit = f64::NEG_INFINITY;
                for (j, logit) in logits.iter_mut().enumerate() {
                    let kj = &k[j * d..(j + 1) * d];
                    let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                    *logit = dot * scale;
                    max_logit = max_logit.max(*logit);
                }
                let mut denom = 0.0;
                for logit in logits.iter_mut() {
                    *logit = (*logit - max_logit).exp();
                    denom += *logit;
                }
                let out_row = &mut out[i * d..(i + 1) * d];
                for (j, weight) in logits.iter().enumerate() {
                    let w = weight / denom;
                    let vj = &v[j * d..(j + 1) * d];
                    for (o, val) in out_row.iter_mut().zip(vj) {
                        *o += w * val;
                    }
                }
            }
            Ok(FeatureVec::unchecked(out, shape.to_vec()))
        }
        ModuleKind::Mlp => {
            if params.w1.rows != width {
                return Err(Error::ShapeMismatch(format!(
                    "mlp weights expect width {}, input has {}",
                    params.w1.rows, width
                )));
            }
            let mut hidden = params.w1.apply_rows(input.data(), n_rows);
            for v in hidden.iter_mut() {
                *v = params.activation.apply(*v);
            }
            let out = params.w2.apply_rows(&hidden, n_rows);
            Ok(FeatureVec::unchecked(out, shape.to_vec()))
        }
    }
}

/// Static pipeline configuration. Extents are bounded so one run completes
/// in well under a second.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub depth: usize,
    pub width: usize,
    pub seq_len: usize,
    pub t_steps: usize,
    pub seed: u64,
    pub schedule: AlphaScheduleKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            width: 64,
            seq_len: 8,
            t_steps: 50,
            seed: 0,
            schedule: AlphaScheduleKind::Linear,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidConfig("depth must be at least 1".into()));
        }
        if self.width < 2 {
            return Err(Error::InvalidConfig("width must be at least 2".into()));
        }
        if self.seq_len < 1 {
            return Err(Error::InvalidConfig("seq_len must be at least 1".into()));
        }
        if self.t_steps < 4 {
            return Err(Error::InvalidConfig("steps must be at least 4".into()));
        }
        if self.depth > 64 || self.width > 1024 || self.seq_len > 256 || self.t_steps > 10_000 {
            return Err(Error::InvalidConfig(
                "pipeline extents exceed desk scale".into(),
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment; unknown keys are rejected.
    pub fn apply_key_value(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::InvalidConfig(format!("bad value '{}' for {}", v, k));
        match key {
            "depth" => self.depth = value.parse().map_err(|_| bad(key, value))?,
            "width" => self.width = value.parse().map_err(|_| bad(key, value))?,
            "seq_len" => self.seq_len = value.parse().map_err(|_| bad(key, value))?,
            "steps" => self.t_steps = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "alpha_schedule" => self.schedule = AlphaScheduleKind::parse(value)?,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown pipeline key '{}'",
                    key
                )))
            }
        }
        Ok(())
    }
}

/// Current latent with its timestep and the noise stream that seeded it.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub x: FeatureVec,
    pub t: i64,
    pub rng_stream_id: u64,
}

// Stream ids for the seeded generator; parameters are a pure function of
// (seed, block index, role).
const STREAM_HEAD: u64 = u64::MAX - 1;
const STREAM_NOISE: u64 = u64::MAX - 2;
const ROLES_PER_BLOCK: u64 = 8;

/// A fully built pipeline: fixed block parameters, the noise-prediction
/// head, and the alpha schedule.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    blocks: Vec<BlockParams>,
    head: Mat,
    schedule: AlphaSchedule,
}

/// Builds a deterministic pipeline: the same config yields bit-identical
/// parameters regardless of build order.
pub fn build_pipeline(config: &PipelineConfig) -> Result<Pipeline> {
    config.validate()?;
    let width = config.width;
    let hidden = width * 2;
    let weight_sigma = 0.6 / (width as f64).sqrt();
    let hidden_sigma = 0.6 / (hidden as f64).sqrt();

    let stream_rng = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        rng
    };

    let blocks = (0..config.depth)
        .map(|b| {
            let base = b as u64 * ROLES_PER_BLOCK;
            let mut pre_rng = stream_rng(base);
            let attn_pre = PreOpParams::seeded(width, config.t_steps, &mut pre_rng);
            let mut attn_rng = stream_rng(base + 1);
            let wq = Mat::seeded(width, width, weight_sigma, &mut attn_rng);
            let wk = Mat::seeded(width, width, weight_sigma, &mut attn_rng);
            let wv = Mat::seeded(width, width, weight_sigma, &mut attn_rng);
            let mut mlp_pre_rng = stream_rng(base + 2);
            let mlp_pre = PreOpParams::seeded(width, config.t_steps, &mut mlp_pre_rng);
            let mut mlp_rng = stream_rng(base + 3);
            let w1 = Mat::seeded(width, hidden, weight_sigma, &mut mlp_rng);
            let w2 = Mat::seeded(hidden, width, hidden_sigma, &mut mlp_rng);
            BlockParams {
                attn_pre,
                mlp_pre,
                wq,
                wk,
                wv,
                w1,
                w2,
                activation: Activation::Tanh,
            }
        })
        .collect();

    let head = Mat::seeded(width, width, weight_sigma, &mut stream_rng(STREAM_HEAD));
    let schedule = AlphaSchedule::build(config.schedule, config.t_steps);
    Ok(Pipeline {
        config: config.clone(),
        blocks,
        head,
        schedule,
    })
}

impl Pipeline {
    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[BlockParams] {
        &self.blocks
    }

    pub fn schedule(&self) -> &AlphaSchedule {
        &self.schedule
    }

    /// Number of cacheable modules: two per block.
    pub fn n_modules(&self) -> usize {
        self.blocks.len() * 2
    }

    /// Cacheable modules in forward order as `(block index, kind)` pairs.
    pub fn modules(&self) -> Vec<(usize, ModuleKind)> {
        (0..self.blocks.len())
            .flat_map(|b| [(b, ModuleKind::Attention), (b, ModuleKind::Mlp)])
            .collect()
    }

    /// Latent shape: `[seq_len, width]`.
    pub fn latent_shape(&self) -> Vec<usize> {
        vec![self.config.seq_len, self.config.width]
    }

    /// Draws the initial latent for a run seed.
    pub fn init_latent(&self, seed: u64) -> LatentState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_NOISE);
        let dist = Normal::new(0.0, 1.0).expect("unit normal");
        let n = self.config.seq_len * self.config.width;
        let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
        LatentState {
            x: FeatureVec::unchecked(data, self.latent_shape()),
            t: self.config.t_steps as i64,
            rng_stream_id: STREAM_NOISE,
        }
    }

    /// Noise prediction from the final hidden state.
    pub fn noise_head(&self, hidden: &FeatureVec) -> FeatureVec {
        let width = self.config.width;
        let n_rows = hidden.len() / width;
        let data = self.head.apply_rows(hidden.data(), n_rows);
        FeatureVec::unchecked(data, hidden.shape().to_vec())
    }

    /// Full forward pass at timestep `t`, returning the per-module inputs
    /// and outputs plus the final hidden state.
    pub fn forward_full(&self, x_t: &FeatureVec, t: i64) -> Result<ForwardPass> {
        let mut hidden = x_t.clone();
        let mut inputs = Vec::with_capacity(self.n_modules());
        let mut outputs = Vec::with_capacity(self.n_modules());
        for (block, kind) in self.modules() {
            let params = &self.blocks[block];
            let input = block_pre_op(&hidden, t, params.pre_op_params(kind));
            let output = block_expensive_op(&input, params, kind)?;
            hidden = hidden.add(&output)?;
            inputs.push(input);
            outputs.push(output);
        }
        Ok(ForwardPass {
            inputs,
            outputs,
            hidden,
        })
    }
}

/// Per-module features produced by one step's forward pass.
pub struct ForwardPass {
    pub inputs: Vec<FeatureVec>,
    pub outputs: Vec<FeatureVec>,
    pub hidden: FeatureVec,
}
