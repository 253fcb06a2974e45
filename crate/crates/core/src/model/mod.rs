//! Toy harmonic-plus-noise NSF model with sinc filters.
//!
//! The model is small enough to train on one CPU core in minutes but keeps
//! every element of the full architecture: a frame-level condition network
//! whose output is up-sampled and smoothed, a source module, five harmonic
//! filter blocks and one noise filter block, and the time-variant sinc
//! filter pair that merges the two branches. Gradients are computed by
//! hand-written reverse passes; the random draws of a forward pass are
//! constants of the graph.

pub mod checkpoint;
pub mod dataset;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod pitch;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NsfError, Result};
use crate::io::F0Track;
use crate::loss::LossGrads;
use crate::signal::{
    moving_average, moving_average_adjoint, repeat_adjoint, upsample_factor, FrameSequence,
    Waveform,
};
use crate::sinc::{
    filter_timevariant, filter_timevariant_adjoint, FilterKind, SincFilterSpec, DEFAULT_MVF_HZ,
    SINC_ORDER,
};
use crate::source::{
    cumulative_phase, cyclic_excitation_from_parts, draw_phase, gaussian_noise, mix_tanh_slices,
    pulse_positions, pulse_train_from_parts, sine_harmonic_from_parts, Beta, MixLayer,
    SourceConfig, BETA_TARGET,
};

use nn::{axpy, dot, ConditionCache, ConditionNet, FilterBlock};

pub use nn::{BlockLayer, Conv1d, BLOCK_LAYERS, KERNEL_SIZE};

pub const HARMONIC_BLOCKS: usize = 5;
pub const NOISE_BLOCKS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceType {
    /// Eight sine harmonics merged by the mix layer.
    Sin,
    /// Pulse train with Gaussian noise in unvoiced regions.
    Pul,
    /// Gaussian noise only.
    Rno,
    /// Cyclic noise.
    Cno,
}

impl SourceType {
    pub const ALL: [SourceType; 4] = [Self::Sin, Self::Pul, Self::Rno, Self::Cno];

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sin" => Some(Self::Sin),
            "pul" => Some(Self::Pul),
            "rno" => Some(Self::Rno),
            "cno" => Some(Self::Cno),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sin => "sin",
            Self::Pul => "pul",
            Self::Rno => "rno",
            Self::Cno => "cno",
        }
    }

    /// Inputs of the mix layer for this source.
    pub fn mix_inputs(self, harmonics: usize) -> usize {
        match self {
            Self::Sin => harmonics,
            _ => 1,
        }
    }

    /// Typical magnitude of one mix-layer input: the harmonic amplitude
    /// `alpha` for sines, 1 for pulses and the noise deviation `sigma` for
    /// both noise sources.
    pub fn input_scale(self, cfg: &SourceConfig) -> f64 {
        match self {
            Self::Sin => cfg.alpha,
            Self::Pul => 1.0,
            Self::Rno | Self::Cno => cfg.sigma,
        }
    }

    /// Mix layer whose weights have a random sign and a magnitude drawn
    /// from `U(0.25, 0.5) / (input_scale * sqrt(n))`, so the tanh input has a
    /// comparable spread of a few tenths for every source type; the bias
    /// starts at 0.
    pub fn init_mix<R: Rng + ?Sized>(self, cfg: &SourceConfig, rng: &mut R) -> MixLayer {
        let n = self.mix_inputs(cfg.harmonics);
        let bound = 1.0 / (self.input_scale(cfg) * (n as f64).sqrt());
        let weights = (0..n)
            .map(|_| {
                let magnitude = rng.random_range(0.25..0.5) * bound;
                if rng.random_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect();
        MixLayer::new(weights, 0.0)
    }
}

impl std::fmt::Display for SourceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub sample_rate: u32,
    /// Samples per feature frame; also the up-sampling factor.
    pub frame_shift: usize,
    pub feature_dims: usize,
    pub cond_hidden: usize,
    pub cond_dims: usize,
    pub channels: usize,
    pub source_type: SourceType,
    /// Initial (or fixed) cyclic-noise decay rate.
    pub beta: f64,
    pub beta_trainable: bool,
    pub source: SourceConfig,
    /// Standard deviation of the noise-branch input `a`.
    pub branch_noise_std: f64,
    pub smooth_window: usize,
    pub smooth_passes: usize,
    pub mvf_hz: f64,
    pub sinc_order: usize,
    /// Bound of the uniform init of each block's output projection, times
    /// `1/sqrt(channels)`. Zero gives blocks that start as the identity.
    pub out_scale: f64,
    /// Per-dimension feature standardization; empty means none.
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let source = SourceConfig::default();
        Self {
            sample_rate: source.sample_rate,
            frame_shift: 80,
            feature_dims: 16,
            cond_hidden: 16,
            cond_dims: 8,
            channels: 16,
            source_type: SourceType::Cno,
            beta: BETA_TARGET,
            beta_trainable: false,
            source,
            branch_noise_std: source.alpha / 3.0,
            smooth_window: 320,
            smooth_passes: 2,
            mvf_hz: DEFAULT_MVF_HZ,
            sinc_order: SINC_ORDER,
            out_scale: 0.1,
            feature_mean: Vec::new(),
            feature_std: Vec::new(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        if self.source.sample_rate != self.sample_rate {
            return Err(NsfError::Config(
                "source sample rate differs from model sample rate".into(),
            ));
        }
        let positive = [
            ("frame_shift", self.frame_shift),
            ("feature_dims", self.feature_dims),
            ("cond_hidden", self.cond_hidden),
            ("cond_dims", self.cond_dims),
            ("channels", self.channels),
            ("smooth_window", self.smooth_window),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(NsfError::Config(format!("{name} must be >= 1")));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(NsfError::Config("beta must be > 0".into()));
        }
        if !(self.branch_noise_std > 0.0) {
            return Err(NsfError::Config("branch_noise_std must be > 0".into()));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.mvf_hz > 0.0 && self.mvf_hz < nyquist) {
            return Err(NsfError::Config(format!(
                "mvf_hz must lie in (0, {nyquist})"
            )));
        }
        if self.sinc_order.is_multiple_of(2) {
            return Err(NsfError::Config("sinc_order must be odd".into()));
        }
        let norm_ok = (self.feature_mean.is_empty() && self.feature_std.is_empty())
            || (self.feature_mean.len() == self.feature_dims
                && self.feature_std.len() == self.feature_dims
                && self.feature_std.iter().all(|s| *s > 0.0));
        if !norm_ok {
            return Err(NsfError::Config(
                "feature_mean/feature_std must both be empty or have feature_dims positive entries"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn frame_shift_secs(&self) -> f64 {
        self.frame_shift as f64 / self.sample_rate as f64
    }
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsfParams {
    pub condition: ConditionNet,
    pub harmonic_blocks: Vec<FilterBlock>,
    pub noise_blocks: Vec<FilterBlock>,
    pub mix: MixLayer,
    pub beta: f64,
}

fn visit_conv(prefix: &str, c: &Conv1d, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
    f(
        &format!("{prefix}.weight"),
        &[c.out_ch, c.in_ch, c.kernel],
        &c.weight,
    );
    f(&format!("{prefix}.bias"), &[c.out_ch], &c.bias);
}

fn visit_conv_mut(prefix: &str, c: &mut Conv1d, f: &mut dyn FnMut(&str, &mut [f64])) {
    f(&format!("{prefix}.weight"), &mut c.weight);
    f(&format!("{prefix}.bias"), &mut c.bias);
}

fn visit_block(prefix: &str, b: &FilterBlock, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
    f(&format!("{prefix}.w_in"), &[b.channels], &b.w_in);
    f(&format!("{prefix}.b_in"), &[b.channels], &b.b_in);
    for (k, l) in b.layers.iter().enumerate() {
        visit_conv(&format!("{prefix}.layer{k}.conv"), &l.conv, f);
        f(
            &format!("{prefix}.layer{k}.cond"),
            &[b.channels, b.cond_dims],
            &l.cond,
        );
    }
    f(&format!("{prefix}.w_out"), &[b.channels], &b.w_out);
    f(&format!("{prefix}.b_out"), &[1], std::slice::from_ref(&b.b_out));
}

fn visit_block_mut(prefix: &str, b: &mut FilterBlock, f: &mut dyn FnMut(&str, &mut [f64])) {
    f(&format!("{prefix}.w_in"), &mut b.w_in);
    f(&format!("{prefix}.b_in"), &mut b.b_in);
    for (k, l) in b.layers.iter_mut().enumerate() {
        visit_conv_mut(&format!("{prefix}.layer{k}.conv"), &mut l.conv, f);
        f(&format!("{prefix}.layer{k}.cond"), &mut l.cond);
    }
    f(&format!("{prefix}.w_out"), &mut b.w_out);
    f(&format!("{prefix}.b_out"), std::slice::from_mut(&mut b.b_out));
}

impl NsfParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let condition = ConditionNet::init(cfg.feature_dims, cfg.cond_hidden, cfg.cond_dims, rng);
        let mut block = |_| FilterBlock::init(cfg.channels, cfg.cond_dims, cfg.out_scale, rng);
        let harmonic_blocks = (0..HARMONIC_BLOCKS).map(&mut block).collect();
        let noise_blocks = (0..NOISE_BLOCKS).map(&mut block).collect();
        let mix = cfg.source_type.init_mix(&cfg.source, rng);
        Self {
            condition,
            harmonic_blocks,
            noise_blocks,
            mix,
            beta: cfg.beta,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            condition: self.condition.zeros_like(),
            harmonic_blocks: self.harmonic_blocks.iter().map(|b| b.zeros_like()).collect(),
            noise_blocks: self.noise_blocks.iter().map(|b| b.zeros_like()).collect(),
            mix: MixLayer::new(vec![0.0; self.mix.weights.len()], 0.0),
            beta: 0.0,
        }
    }

    /// Calls `f(name, shape, values)` for every tensor in a fixed order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_conv("cond.conv1", &self.condition.conv1, f);
        visit_conv("cond.conv2", &self.condition.conv2, f);
        for (i, b) in self.harmonic_blocks.iter().enumerate() {
            visit_block(&format!("harm{i}"), b, f);
        }
        for (i, b) in self.noise_blocks.iter().enumerate() {
            visit_block(&format!("noise{i}"), b, f);
        }
        f("mix.weights", &[self.mix.weights.len()], &self.mix.weights);
        f("mix.bias", &[1], std::slice::from_ref(&self.mix.bias));
        f("beta", &[1], std::slice::from_ref(&self.beta));
    }

    /// Mutable counterpart of [`NsfParams::visit`], same order.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_conv_mut("cond.conv1", &mut self.condition.conv1, f);
        visit_conv_mut("cond.conv2", &mut self.condition.conv2, f);
        for (i, b) in self.harmonic_blocks.iter_mut().enumerate() {
            visit_block_mut(&format!("harm{i}"), b, f);
        }
        for (i, b) in self.noise_blocks.iter_mut().enumerate() {
            visit_block_mut(&format!("noise{i}"), b, f);
        }
        f("mix.weights", &mut self.mix.weights);
        f("mix.bias", std::slice::from_mut(&mut self.mix.bias));
        f("beta", std::slice::from_mut(&mut self.beta));
    }

    /// `(name, shape)` of every tensor.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |n, s, _| out.push((n.to_string(), s.to_vec())));
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    /// All values flattened in visiting order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(NsfError::LengthMismatch {
                what: "flat parameter vector",
                left: flat.len(),
                right: self.num_params(),
            });
        }
        let mut pos = 0;
        self.visit_mut(&mut |_, v| {
            v.copy_from_slice(&flat[pos..pos + v.len()]);
            pos += v.len();
        });
        Ok(())
    }
}

/// Random constants of one forward pass. Drawing order: initial phase
/// (sine, pulse and cyclic sources), source noise, then the noise-branch
/// input. The first two steps follow the source-module generators, so a
/// model source equals the standalone generator under the same seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDraws {
    pub phi: f64,
    /// One noise sequence per mix input.
    pub source_noise: Vec<Vec<f64>>,
    pub branch_noise: Vec<f64>,
}

/// F0 and features checked against the model and brought to sample level.
#[derive(Debug, Clone)]
pub struct PreparedInputs {
    pub f0: Vec<f64>,
    /// Standardized features, `feature_dims x frames`, channel-major.
    features: Vec<f64>,
    frames: usize,
}

impl PreparedInputs {
    pub fn num_samples(&self) -> usize {
        self.f0.len()
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }
}

#[derive(Debug, Clone)]
struct Tape {
    cond_cache: ConditionCache,
    cond: Vec<f64>,
    frames: usize,
    mix_inputs: Vec<Vec<f64>>,
    dbeta: Option<Vec<f64>>,
    harmonic: Vec<nn::BlockCache>,
    noise: Vec<nn::BlockCache>,
    filter_spec: SincFilterSpec,
}

/// Outputs of a forward pass, optionally with the tape needed by
/// [`ToyNsfModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: Vec<f64>,
    /// Outputs of the harmonic blocks, in order.
    pub blocks: Vec<Vec<f64>>,
    /// Source signal entering the first harmonic block.
    pub source: Vec<f64>,
    pub noise_branch: Vec<f64>,
    pub sample_rate: u32,
    tape: Option<Tape>,
}

impl ForwardPass {
    pub fn output_waveform(&self) -> Result<Waveform> {
        Waveform::new(self.output.clone(), self.sample_rate)
    }

    pub fn is_taped(&self) -> bool {
        self.tape.is_some()
    }

    /// Drops the tape; `backward` on the result fails with
    /// [`NsfError::DetachedGraph`].
    pub fn detach(mut self) -> Self {
        self.tape = None;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyNsfModel {
    pub config: ModelConfig,
    pub params: NsfParams,
}

impl ToyNsfModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = NsfParams::init(&config, rng);
        Ok(Self { config, params })
    }

    pub fn receptive_field(&self) -> usize {
        self.params.harmonic_blocks[0].receptive_field()
    }

    pub fn prepare(&self, f0: &F0Track, features: &FrameSequence) -> Result<PreparedInputs> {
        let cfg = &self.config;
        if f0.len() != features.num_frames() {
            return Err(NsfError::LengthMismatch {
                what: "f0 frames vs feature frames",
                left: f0.len(),
                right: features.num_frames(),
            });
        }
        if features.dims() != cfg.feature_dims {
            return Err(NsfError::LengthMismatch {
                what: "feature dims vs model",
                left: features.dims(),
                right: cfg.feature_dims,
            });
        }
        for (what, shift) in [("f0", f0.frame_shift()), ("features", features.frame_shift())] {
            if upsample_factor(shift, cfg.sample_rate)? != cfg.frame_shift {
                return Err(NsfError::InvalidInput(format!(
                    "{what} frame shift {shift} s does not match the model's {} samples",
                    cfg.frame_shift
                )));
            }
        }
        let frames = features.num_frames();
        let mut feats = vec![0.0; cfg.feature_dims * frames];
        for n in 0..frames {
            for d in 0..cfg.feature_dims {
                let mut v = features.get(n, d);
                if !cfg.feature_mean.is_empty() {
                    v = (v - cfg.feature_mean[d]) / cfg.feature_std[d];
                }
                feats[d * frames + n] = v;
            }
        }
        Ok(PreparedInputs {
            f0: f0.upsample(cfg.sample_rate)?,
            features: feats,
            frames,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, num_samples: usize, rng: &mut R) -> SourceDraws {
        let src = &self.config.source;
        let (phi, source_noise) = match self.config.source_type {
            SourceType::Sin => {
                let phi = draw_phase(rng);
                let noise = (0..src.harmonics)
                    .map(|_| gaussian_noise(num_samples, src.sigma, rng))
                    .collect();
                (phi, noise)
            }
            SourceType::Pul | SourceType::Cno => {
                let phi = draw_phase(rng);
                (phi, vec![gaussian_noise(num_samples, src.sigma, rng)])
            }
            SourceType::Rno => (0.0, vec![gaussian_noise(num_samples, src.sigma, rng)]),
        };
        let branch_noise = gaussian_noise(num_samples, self.config.branch_noise_std, rng);
        SourceDraws {
            phi,
            source_noise,
            branch_noise,
        }
    }

    /// Forward pass with fresh draws and no tape.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        f0: &F0Track,
        features: &FrameSequence,
        rng: &mut R,
    ) -> Result<ForwardPass> {
        let inputs = self.prepare(f0, features)?;
        let draws = self.draw(inputs.num_samples(), rng);
        self.forward_with_draws(&inputs, &draws, false)
    }

    pub fn synthesize<R: Rng + ?Sized>(
        &self,
        f0: &F0Track,
        features: &FrameSequence,
        rng: &mut R,
    ) -> Result<Waveform> {
        self.forward(f0, features, rng)?.output_waveform()
    }

    fn check_draws(&self, len: usize, draws: &SourceDraws) -> Result<()> {
        let inputs = self.params.mix.inputs();
        let ok = draws.source_noise.len() == inputs
            && draws.source_noise.iter().all(|n| n.len() == len)
            && draws.branch_noise.len() == len;
        if ok {
            Ok(())
        } else {
            Err(NsfError::InvalidInput(
                "random draws do not match the model source or the input length".into(),
            ))
        }
    }

    fn upsample_condition(&self, frame_values: &[f64], frames: usize) -> Vec<f64> {
        let cfg = &self.config;
        let len = frames * cfg.frame_shift;
        let mut out = Vec::with_capacity(cfg.cond_dims * len);
        for d in 0..cfg.cond_dims {
            let mut seq: Vec<f64> = frame_values[d * frames..(d + 1) * frames]
                .iter()
                .flat_map(|v| std::iter::repeat_n(*v, cfg.frame_shift))
                .collect();
            for _ in 0..cfg.smooth_passes {
                seq = moving_average(&seq, cfg.smooth_window);
            }
            out.extend(seq);
        }
        out
    }

    /// Source signal `e` and the mix-layer inputs it was built from.
    fn source_signal(
        &self,
        f0: &[f64],
        draws: &SourceDraws,
        want_beta_grad: bool,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>, Option<Vec<f64>>)> {
        let cfg = &self.config;
        let src = &cfg.source;
        let mut dbeta = None;
        let channels: Vec<Vec<f64>> = match cfg.source_type {
            SourceType::Sin => {
                let theta = cumulative_phase(f0, src.sample_rate);
                (1..=src.harmonics)
                    .map(|h| {
                        sine_harmonic_from_parts(
                            f0,
                            &theta,
                            h,
                            draws.phi,
                            &draws.source_noise[h - 1],
                            src,
                        )
                    })
                    .collect()
            }
            SourceType::Pul => {
                let theta = cumulative_phase(f0, src.sample_rate);
                let pulses = pulse_positions(f0, &theta, draws.phi);
                vec![pulse_train_from_parts(f0, &pulses, &draws.source_noise[0], src)]
            }
            SourceType::Rno => vec![draws.source_noise[0].clone()],
            SourceType::Cno => {
                let theta = cumulative_phase(f0, src.sample_rate);
                let pulses = pulse_positions(f0, &theta, draws.phi);
                let (e, d) = cyclic_excitation_from_parts(
                    f0,
                    &Beta::Constant(self.params.beta),
                    &pulses,
                    &draws.source_noise[0],
                    src.sample_rate,
                    want_beta_grad,
                );
                dbeta = d;
                vec![e]
            }
        };
        let slices: Vec<&[f64]> = channels.iter().map(|c| c.as_slice()).collect();
        let e = mix_tanh_slices(&slices, &self.params.mix)?;
        Ok((e, channels, dbeta))
    }

    /// Deterministic forward pass given explicit draws.
    pub fn forward_with_draws(
        &self,
        inputs: &PreparedInputs,
        draws: &SourceDraws,
        tape: bool,
    ) -> Result<ForwardPass> {
        let cfg = &self.config;
        let len = inputs.num_samples();
        self.check_draws(len, draws)?;
        if !(self.params.beta > 0.0) || !self.params.beta.is_finite() {
            return Err(NsfError::InvalidInput(format!(
                "beta = {} is not a valid decay rate",
                self.params.beta
            )));
        }

        let (cond_frames, cond_cache) =
            self.params
                .condition
                .forward(&inputs.features, inputs.frames, tape);
        let cond = self.upsample_condition(&cond_frames, inputs.frames);

        let want_beta_grad =
            tape && cfg.beta_trainable && cfg.source_type == SourceType::Cno;
        let (source, mix_inputs, dbeta) = self.source_signal(&inputs.f0, draws, want_beta_grad)?;

        let mut harmonic_caches = Vec::new();
        let mut blocks = Vec::with_capacity(HARMONIC_BLOCKS);
        let mut x = source.clone();
        for block in &self.params.harmonic_blocks {
            let (y, cache) = block.forward(&x, &cond, tape);
            harmonic_caches.extend(cache);
            blocks.push(y.clone());
            x = y;
        }
        let mut noise_caches = Vec::new();
        let mut noise_branch = draws.branch_noise.clone();
        for block in &self.params.noise_blocks {
            let (y, cache) = block.forward(&noise_branch, &cond, tape);
            noise_caches.extend(cache);
            noise_branch = y;
        }

        let spec = SincFilterSpec::new(
            cfg.sinc_order,
            vec![cfg.mvf_hz / cfg.sample_rate as f64; inputs.frames.max(1)],
        )?;
        let lp = filter_timevariant(&x, FilterKind::LowPass, &spec, cfg.frame_shift)?;
        let hp = filter_timevariant(&noise_branch, FilterKind::HighPass, &spec, cfg.frame_shift)?;
        let output: Vec<f64> = lp.iter().zip(&hp).map(|(a, b)| a + b).collect();

        let tape = cond_cache.map(|cond_cache| Tape {
            cond_cache,
            cond,
            frames: inputs.frames,
            mix_inputs,
            dbeta,
            harmonic: harmonic_caches,
            noise: noise_caches,
            filter_spec: spec,
        });
        Ok(ForwardPass {
            output,
            blocks,
            source,
            noise_branch,
            sample_rate: cfg.sample_rate,
            tape,
        })
    }

    /// Gradients of a loss with respect to every parameter, given the loss
    /// gradients with respect to the pass outputs.
    pub fn backward(&self, pass: &ForwardPass, grads: &LossGrads) -> Result<NsfParams> {
        let tape = pass.tape.as_ref().ok_or(NsfError::DetachedGraph)?;
        let cfg = &self.config;
        let len = pass.output.len();
        if grads.output.len() != len {
            return Err(NsfError::LengthMismatch {
                what: "output gradient vs output",
                left: grads.output.len(),
                right: len,
            });
        }
        if grads.blocks.len() > HARMONIC_BLOCKS || grads.blocks.iter().any(|g| g.len() != len) {
            return Err(NsfError::InvalidInput("malformed block gradients".into()));
        }
        let mut out = self.params.zeros_like();
        let mut grad_cond = vec![0.0; cfg.cond_dims * len];

        let mut g = filter_timevariant_adjoint(
            &grads.output,
            FilterKind::LowPass,
            &tape.filter_spec,
            cfg.frame_shift,
        )?;
        for b in (0..self.params.harmonic_blocks.len()).rev() {
            if let Some(gb) = grads.blocks.get(b) {
                axpy(&mut g, 1.0, gb);
            }
            g = self.params.harmonic_blocks[b].backward(
                &tape.harmonic[b],
                &tape.cond,
                &g,
                &mut out.harmonic_blocks[b],
                &mut grad_cond,
            );
        }
        let mut gn = filter_timevariant_adjoint(
            &grads.output,
            FilterKind::HighPass,
            &tape.filter_spec,
            cfg.frame_shift,
        )?;
        for b in (0..self.params.noise_blocks.len()).rev() {
            gn = self.params.noise_blocks[b].backward(
                &tape.noise[b],
                &tape.cond,
                &gn,
                &mut out.noise_blocks[b],
                &mut grad_cond,
            );
        }

        // source: e = tanh(sum_i w_i x_i + b)
        let grad_pre: Vec<f64> = g
            .iter()
            .zip(&pass.source)
            .map(|(ge, e)| ge * (1.0 - e * e))
            .collect();
        for (gw, x) in out.mix.weights.iter_mut().zip(&tape.mix_inputs) {
            *gw = dot(&grad_pre, x);
        }
        out.mix.bias = grad_pre.iter().sum();
        if cfg.beta_trainable {
            let mut gb = grads.beta;
            if let Some(d) = &tape.dbeta {
                gb += self.params.mix.weights[0] * dot(&grad_pre, d);
            }
            out.beta = gb;
        }

        let frames = tape.frames;
        let mut grad_frames = vec![0.0; cfg.cond_dims * frames];
        for d in 0..cfg.cond_dims {
            let mut gs = grad_cond[d * len..(d + 1) * len].to_vec();
            for _ in 0..cfg.smooth_passes {
                gs = moving_average_adjoint(&gs, cfg.smooth_window);
            }
            grad_frames[d * frames..(d + 1) * frames]
                .copy_from_slice(&repeat_adjoint(&gs, cfg.frame_shift));
        }
        self.params
            .condition
            .backward(&tape.cond_cache, &grad_frames, frames, &mut out.condition);
        Ok(out)
    }
}
