//! Training configuration, the Adam training loop and the Table-1 model
//! presets.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{feature_stats, make_synthetic_dataset, Utterance, FEATURE_BANDS};
use super::optim::{Adam, AdamConfig};
use super::{ModelConfig, NsfParams, SourceType, ToyNsfModel};
use crate::error::{NsfError, Result};
use crate::loss::{
    build_sine_mask, total_loss_with_grads, LossConfig, LossInputs, LossReport, SpectralLoss,
};
use crate::source::{BETA_REFERENCES, BETA_TARGET};

pub const CONFIG_VERSION: u32 = 1;

const DATA_SEED_OFFSET: u64 = 0xda7a;

/// Names of the nine model rows of Table 1.
pub const TABLE1_ROWS: [&str; 9] = [
    "sin",
    "pul",
    "rno",
    "cno_b1",
    "cno_b2",
    "cno_b3",
    "cno_btr",
    "rno_nomask",
    "cno_b2_nomask",
];

/// Starting value of a trainable beta; away from the penalty target so the
/// L1 pull is active from the first step.
pub const TRAINABLE_BETA_INIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaMode {
    Fixed(f64),
    Trainable { init: f64 },
}

impl BetaMode {
    pub fn initial(self) -> f64 {
        match self {
            BetaMode::Fixed(b) => b,
            BetaMode::Trainable { init } => init,
        }
    }

    pub fn is_trainable(self) -> bool {
        matches!(self, BetaMode::Trainable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Length of the random training segments, in samples.
    pub segment_samples: usize,
    pub batch_size: usize,
    pub source_type: SourceType,
    pub beta_mode: BetaMode,
    pub mask_loss: bool,
    pub seed: u64,
    pub channels: usize,
    pub cond_hidden: usize,
    pub cond_dims: usize,
    pub mvf_hz: f64,
    pub train_utts: usize,
    pub val_utts: usize,
    pub min_duration: f64,
    pub max_duration: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 24,
            segment_samples: 4000,
            batch_size: 1,
            source_type: SourceType::Cno,
            beta_mode: BetaMode::Fixed(BETA_TARGET),
            mask_loss: true,
            seed: 1,
            channels: 16,
            cond_hidden: 16,
            cond_dims: 8,
            mvf_hz: crate::sinc::DEFAULT_MVF_HZ,
            train_utts: 32,
            val_utts: 8,
            min_duration: 0.5,
            max_duration: 1.0,
        }
    }
}

fn kv_error(line: usize, message: impl Into<String>) -> NsfError {
    NsfError::ConfigFile {
        line,
        message: message.into(),
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| kv_error(line, format!("invalid value {v:?} for {key}")))
}

impl TrainConfig {
    /// Settings of one Table-1 row; all other fields keep their defaults.
    pub fn table1(row: &str) -> Result<Self> {
        let base = Self::default();
        let cno = |beta: BetaMode, mask: bool| Self {
            source_type: SourceType::Cno,
            beta_mode: beta,
            mask_loss: mask,
            ..base.clone()
        };
        let other = |source_type: SourceType, mask: bool| Self {
            source_type,
            mask_loss: mask,
            ..base.clone()
        };
        Ok(match row {
            "sin" => other(SourceType::Sin, false),
            "pul" => other(SourceType::Pul, false),
            "rno" => other(SourceType::Rno, true),
            "cno_b1" => cno(BetaMode::Fixed(BETA_REFERENCES[0]), true),
            "cno_b2" => cno(BetaMode::Fixed(BETA_REFERENCES[1]), true),
            "cno_b3" => cno(BetaMode::Fixed(BETA_REFERENCES[2]), true),
            "cno_btr" => cno(
                BetaMode::Trainable {
                    init: TRAINABLE_BETA_INIT,
                },
                true,
            ),
            "rno_nomask" => other(SourceType::Rno, false),
            "cno_b2_nomask" => cno(BetaMode::Fixed(BETA_REFERENCES[1]), false),
            _ => {
                return Err(NsfError::Config(format!(
                    "unknown model row {row:?}; expected one of {}",
                    TABLE1_ROWS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if !(self.adam.lr > 0.0) {
            return Err(NsfError::Config("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.segment_samples == 0 {
            return Err(NsfError::Config(
                "batch_size and segment_samples must be >= 1".into(),
            ));
        }
        if self.train_utts == 0 || self.val_utts == 0 {
            return Err(NsfError::Config(
                "need at least one training and one validation utterance".into(),
            ));
        }
        if !(self.min_duration > 0.0 && self.min_duration <= self.max_duration) {
            return Err(NsfError::Config("invalid utterance duration range".into()));
        }
        let beta = self.beta_mode.initial();
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(NsfError::Config("beta must be > 0".into()));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            mask_loss: self.mask_loss,
            ..LossConfig::default()
        }
    }

    /// Model settings implied by this configuration.
    pub fn model_config(&self, feature_mean: Vec<f64>, feature_std: Vec<f64>) -> ModelConfig {
        let mut source = ModelConfig::default().source;
        source.seed = self.seed;
        ModelConfig {
            feature_dims: FEATURE_BANDS,
            cond_hidden: self.cond_hidden,
            cond_dims: self.cond_dims,
            channels: self.channels,
            source_type: self.source_type,
            beta: self.beta_mode.initial(),
            beta_trainable: self.beta_mode.is_trainable(),
            source,
            mvf_hz: self.mvf_hz,
            feature_mean,
            feature_std,
            ..ModelConfig::default()
        }
    }

    /// Reads flat `key = value` text. Keys are applied in order on top of
    /// the defaults; `row = <name>` resets everything to a Table-1 preset.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| kv_error(line, "expected key = value"))?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "version" => {
                    let version: u32 = parse_value(line, key, v)?;
                    if version != CONFIG_VERSION {
                        return Err(kv_error(
                            line,
                            format!("config version {version} is not supported (expected {CONFIG_VERSION})"),
                        ));
                    }
                }
                "row" => cfg = Self::table1(v).map_err(|e| kv_error(line, e.to_string()))?,
                "lr" => cfg.adam.lr = parse_value(line, key, v)?,
                "adam_beta1" => cfg.adam.beta1 = parse_value(line, key, v)?,
                "adam_beta2" => cfg.adam.beta2 = parse_value(line, key, v)?,
                "adam_eps" => cfg.adam.eps = parse_value(line, key, v)?,
                "epochs" => cfg.epochs = parse_value(line, key, v)?,
                "segment_samples" => cfg.segment_samples = parse_value(line, key, v)?,
                "batch_size" => cfg.batch_size = parse_value(line, key, v)?,
                "source_type" => {
                    cfg.source_type = SourceType::parse(v)
                        .ok_or_else(|| kv_error(line, format!("unknown source type {v:?}")))?
                }
                "beta" => {
                    cfg.beta_mode = if v == "trainable" {
                        BetaMode::Trainable {
                            init: TRAINABLE_BETA_INIT,
                        }
                    } else {
                        BetaMode::Fixed(parse_value(line, key, v)?)
                    }
                }
                "beta_init" => {
                    let init = parse_value(line, key, v)?;
                    match &mut cfg.beta_mode {
                        BetaMode::Trainable { init: i } => *i = init,
                        BetaMode::Fixed(_) => {
                            return Err(kv_error(line, "beta_init requires beta = trainable"))
                        }
                    }
                }
                "mask_loss" => cfg.mask_loss = parse_value(line, key, v)?,
                "seed" => cfg.seed = parse_value(line, key, v)?,
                "channels" => cfg.channels = parse_value(line, key, v)?,
                "cond_hidden" => cfg.cond_hidden = parse_value(line, key, v)?,
                "cond_dims" => cfg.cond_dims = parse_value(line, key, v)?,
                "mvf_hz" => cfg.mvf_hz = parse_value(line, key, v)?,
                "train_utts" => cfg.train_utts = parse_value(line, key, v)?,
                "val_utts" => cfg.val_utts = parse_value(line, key, v)?,
                "min_duration" => cfg.min_duration = parse_value(line, key, v)?,
                "max_duration" => cfg.max_duration = parse_value(line, key, v)?,
                _ => return Err(kv_error(line, format!("unknown key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every setting as `key = value` lines; parses back to `self`.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("version", CONFIG_VERSION.to_string());
        put("lr", self.adam.lr.to_string());
        put("adam_beta1", self.adam.beta1.to_string());
        put("adam_beta2", self.adam.beta2.to_string());
        put("adam_eps", self.adam.eps.to_string());
        put("epochs", self.epochs.to_string());
        put("segment_samples", self.segment_samples.to_string());
        put("batch_size", self.batch_size.to_string());
        put("source_type", self.source_type.to_string());
        match self.beta_mode {
            BetaMode::Fixed(b) => put("beta", b.to_string()),
            BetaMode::Trainable { init } => {
                put("beta", "trainable".into());
                put("beta_init", init.to_string());
            }
        }
        put("mask_loss", self.mask_loss.to_string());
        put("seed", self.seed.to_string());
        put("channels", self.channels.to_string());
        put("cond_hidden", self.cond_hidden.to_string());
        put("cond_dims", self.cond_dims.to_string());
        put("mvf_hz", self.mvf_hz.to_string());
        put("train_utts", self.train_utts.to_string());
        put("val_utts", self.val_utts.to_string());
        put("min_duration", self.min_duration.to_string());
        put("max_duration", self.max_duration.to_string());
        s
    }
}

/// Builds a model for `cfg` with feature standardization taken from the
/// training set.
pub fn build_model(cfg: &TrainConfig, train_set: &[Utterance]) -> Result<ToyNsfModel> {
    cfg.validate()?;
    let (mean, std) = feature_stats(train_set);
    let model_cfg = cfg.model_config(mean, std);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ToyNsfModel::new(model_cfg, &mut rng)
}

/// The synthetic training and validation utterances for `cfg`, generated
/// from its seed; identical calls give identical data.
pub fn synthetic_splits(cfg: &TrainConfig) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(DATA_SEED_OFFSET));
    let mut all = make_synthetic_dataset(
        cfg.train_utts + cfg.val_utts,
        (cfg.min_duration, cfg.max_duration),
        &mut rng,
    )?;
    let val = all.split_off(cfg.train_utts);
    Ok((all, val))
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len().max(1) as f64;
    let avg = |f: &dyn Fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let avg_vec = |f: &dyn Fn(&LossReport) -> &Vec<f64>| {
        let len = reports.first().map_or(0, |r| f(r).len());
        (0..len)
            .map(|i| reports.iter().map(|r| f(r)[i]).sum::<f64>() / n)
            .collect()
    };
    LossReport {
        total: avg(&|r| r.total),
        plain: avg(&|r| r.plain),
        per_config: avg_vec(&|r| &r.per_config),
        per_block_masked: avg_vec(&|r| &r.per_block_masked),
        beta_penalty: avg(&|r| r.beta_penalty),
    }
}

/// Loss (and optionally gradients) of one utterance with fresh draws from
/// `rng`: source noise first, then the mask.
pub fn utterance_loss<R: Rng + ?Sized>(
    model: &ToyNsfModel,
    utt: &Utterance,
    loss_cfg: &LossConfig,
    evaluator: &SpectralLoss,
    want_grad: bool,
    rng: &mut R,
) -> Result<(LossReport, Option<NsfParams>)> {
    let inputs = model.prepare(&utt.f0, &utt.features)?;
    if inputs.num_samples() != utt.waveform.len() {
        return Err(NsfError::LengthMismatch {
            what: "model output vs waveform",
            left: inputs.num_samples(),
            right: utt.waveform.len(),
        });
    }
    let draws = model.draw(inputs.num_samples(), rng);
    let pass = model.forward_with_draws(&inputs, &draws, want_grad)?;
    let mask = if loss_cfg.mask_loss {
        Some(build_sine_mask(&inputs.f0, &model.config.source, rng)?.into_samples())
    } else {
        None
    };
    let trainable_beta = model.config.beta_trainable.then_some(model.params.beta);
    let (report, grads) = total_loss_with_grads(
        LossInputs {
            output: &pass.output,
            blocks: &pass.blocks,
            target: utt.waveform.samples(),
            mask: mask.as_deref(),
            trainable_beta,
        },
        loss_cfg,
        evaluator,
        want_grad,
    )?;
    let param_grads = match grads {
        Some(g) => Some(model.backward(&pass, &g)?),
        None => None,
    };
    Ok((report, param_grads))
}

/// Owns the model, optimizer state and training RNG.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ToyNsfModel,
    loss_cfg: LossConfig,
    evaluator: SpectralLoss,
    adam: Adam,
    rng: ChaCha8Rng,
    segment_frames: usize,
    steps: usize,
}

impl Trainer {
    pub fn new(model: ToyNsfModel, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Self::with_adam(model, cfg, cfg.adam)
    }

    /// Like [`Trainer::new`] but with explicit optimizer settings, which
    /// may include a zero learning rate.
    pub fn with_adam(model: ToyNsfModel, cfg: &TrainConfig, adam: AdamConfig) -> Result<Self> {
        let loss_cfg = cfg.loss_config();
        loss_cfg.validate()?;
        let evaluator = SpectralLoss::new(&loss_cfg.stft_configs, loss_cfg.eta)?;
        let adam = Adam::new(adam, &model.params)?;
        let segment_frames = (cfg.segment_samples / model.config.frame_shift).max(1);
        Ok(Self {
            model,
            loss_cfg,
            evaluator,
            adam,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed)),
            segment_frames,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss_cfg
    }

    fn random_segment(&mut self, utt: &Utterance) -> Result<Utterance> {
        let n = utt.num_frames();
        if n <= self.segment_frames {
            return Ok(utt.clone());
        }
        let start = self.rng.random_range(0..=n - self.segment_frames);
        utt.segment(start, self.segment_frames)
    }

    /// Loss of a batch of random segments without updating anything.
    pub fn probe(&mut self, batch: &[Utterance]) -> Result<LossReport> {
        let mut reports = Vec::with_capacity(batch.len());
        for utt in batch {
            let seg = self.random_segment(utt)?;
            let (r, _) = utterance_loss(
                &self.model,
                &seg,
                &self.loss_cfg,
                &self.evaluator,
                false,
                &mut self.rng,
            )?;
            reports.push(r);
        }
        Ok(mean_report(&reports))
    }

    /// One Adam update on random segments of `batch`; returns the
    /// pre-update loss averaged over the batch.
    pub fn step(&mut self, batch: &[Utterance]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(NsfError::InvalidInput("empty batch".into()));
        }
        let mut reports = Vec::with_capacity(batch.len());
        let mut total = self.model.params.zeros_like().to_flat();
        for utt in batch {
            let seg = self.random_segment(utt)?;
            let (r, g) = utterance_loss(
                &self.model,
                &seg,
                &self.loss_cfg,
                &self.evaluator,
                true,
                &mut self.rng,
            )?;
            if !r.total.is_finite() {
                return Err(NsfError::Diverged {
                    epoch: 0,
                    step: self.steps,
                    loss: r.total,
                });
            }
            let g = g.expect("gradients requested").to_flat();
            for (t, v) in total.iter_mut().zip(&g) {
                *t += v / batch.len() as f64;
            }
            reports.push(r);
        }
        let mut grads = self.model.params.zeros_like();
        grads.set_flat(&total)?;
        let frozen: &[&str] = if self.model.config.beta_trainable {
            &[]
        } else {
            &["beta"]
        };
        self.adam.update(&mut self.model.params, &grads, frozen);
        self.steps += 1;
        Ok(mean_report(&reports))
    }

    /// Mean total loss over whole utterances with draws from a fixed seed,
    /// so that successive evaluations are comparable.
    pub fn evaluate(&self, utts: &[Utterance], seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = 0.0;
        for utt in utts {
            let (r, _) = utterance_loss(
                &self.model,
                utt,
                &self.loss_cfg,
                &self.evaluator,
                false,
                &mut rng,
            )?;
            sum += r.total;
        }
        Ok(sum / utts.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 0 is the evaluation before the first update.
    pub epoch: usize,
    /// Updates performed so far.
    pub steps: usize,
    pub train_loss: f64,
    pub train_plain: f64,
    pub val_loss: f64,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Parameters from the epoch with the lowest validation loss.
    pub best: ToyNsfModel,
    pub last: ToyNsfModel,
    pub steps: usize,
}

impl TrainOutcome {
    /// Relative drop of the epoch-averaged training loss from epoch 0 to
    /// the last epoch.
    pub fn train_loss_drop(&self) -> f64 {
        match (self.log.first(), self.log.last()) {
            (Some(a), Some(b)) if a.train_loss > 0.0 => 1.0 - b.train_loss / a.train_loss,
            _ => 0.0,
        }
    }
}

/// Index of the entry with the smallest validation loss; the earliest one
/// wins ties. NaN losses never win.
pub fn select_best_epoch(log: &[EpochLog]) -> Option<usize> {
    log.iter()
        .enumerate()
        .filter(|(_, e)| !e.val_loss.is_nan())
        .min_by(|(_, a), (_, b)| a.val_loss.total_cmp(&b.val_loss))
        .map(|(i, _)| i)
}

/// Trains for `cfg.epochs` epochs; each epoch visits every training
/// utterance once in shuffled order. Calls `on_epoch` after epoch 0 (the
/// pre-training evaluation) and after every epoch.
pub fn train(
    model: ToyNsfModel,
    train_set: &[Utterance],
    val_set: &[Utterance],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(NsfError::InvalidInput("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(NsfError::InvalidInput("validation set is empty".into()));
    }
    let mut trainer = Trainer::new(model, cfg)?;
    let val_seed = cfg.seed.wrapping_add(0xa11d);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs + 1);

    let mut initial = Vec::new();
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<Utterance> = chunk.iter().map(|&i| train_set[i].clone()).collect();
        initial.push(trainer.probe(&batch)?);
    }
    let initial = mean_report(&initial);
    let entry = EpochLog {
        epoch: 0,
        steps: 0,
        train_loss: initial.total,
        train_plain: initial.plain,
        val_loss: trainer.evaluate(val_set, val_seed)?,
        beta: trainer.model.params.beta,
    };
    on_epoch(&entry);
    log.push(entry);
    let mut best = trainer.model.clone();
    let mut best_val = log[0].val_loss;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut trainer.rng);
        let mut reports = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Utterance> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let r = trainer.step(&batch).map_err(|e| match e {
                NsfError::Diverged { step, loss, .. } => NsfError::Diverged { epoch, step, loss },
                other => other,
            })?;
            reports.push(r);
        }
        let r = mean_report(&reports);
        let val_loss = trainer.evaluate(val_set, val_seed)?;
        if !val_loss.is_finite() {
            return Err(NsfError::Diverged {
                epoch,
                step: trainer.steps(),
                loss: val_loss,
            });
        }
        let entry = EpochLog {
            epoch,
            steps: trainer.steps(),
            train_loss: r.total,
            train_plain: r.plain,
            val_loss,
            beta: trainer.model.params.beta,
        };
        on_epoch(&entry);
        log.push(entry);
        if val_loss < best_val {
            best_val = val_loss;
            best = trainer.model.clone();
        }
    }
    let best_epoch = select_best_epoch(&log).unwrap_or(0);
    Ok(TrainOutcome {
        best_epoch,
        best,
        steps: trainer.steps(),
        last: trainer.model,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::dataset::make_synthetic_dataset;

    fn entry(epoch: usize, val: f64) -> EpochLog {
        EpochLog {
            epoch,
            steps: epoch * 10,
            train_loss: 1.0,
            train_plain: 1.0,
            val_loss: val,
            beta: 0.87,
        }
    }

    #[test]
    fn best_epoch_is_argmin_of_validation_loss() {
        let log = vec![entry(0, 3.0), entry(1, 2.0), entry(2, 1.5), entry(3, 1.7), entry(4, 1.5)];
        assert_eq!(select_best_epoch(&log), Some(2));
        let log = vec![entry(0, f64::NAN), entry(1, 4.0)];
        assert_eq!(select_best_epoch(&log), Some(1));
        assert_eq!(select_best_epoch(&[]), None);
    }

    #[test]
    fn table1_rows_mirror_the_table() {
        let mask: Vec<bool> = TABLE1_ROWS
            .iter()
            .map(|r| TrainConfig::table1(r).unwrap().mask_loss)
            .collect();
        assert_eq!(mask, [false, false, true, true, true, true, true, false, false]);
        let b1 = TrainConfig::table1("cno_b1").unwrap();
        assert_eq!(b1.beta_mode, BetaMode::Fixed(0.435));
        assert!(TrainConfig::table1("cno_btr").unwrap().beta_mode.is_trainable());
        assert_eq!(TrainConfig::table1("rno").unwrap().source_type, SourceType::Rno);
        assert!(TrainConfig::table1("cno_b4").is_err());
    }

    #[test]
    fn kv_round_trip_and_errors() {
        let mut cfg = TrainConfig::table1("cno_btr").unwrap();
        cfg.epochs = 3;
        cfg.adam.lr = 1e-3;
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);

        let text = "# comment\nrow = sin\nepochs = 2\n";
        let parsed = TrainConfig::from_kv(text).unwrap();
        assert_eq!(parsed.source_type, SourceType::Sin);
        assert_eq!(parsed.epochs, 2);

        let err = TrainConfig::from_kv("epochs = 2\nfoo = 1\n").unwrap_err();
        assert!(matches!(err, NsfError::ConfigFile { line: 2, .. }));
        let err = TrainConfig::from_kv("version = 2\n").unwrap_err();
        assert!(matches!(err, NsfError::ConfigFile { line: 1, .. }));
        assert!(TrainConfig::from_kv("lr = 0\n").is_err());
        assert!(TrainConfig::from_kv("epochs\n").is_err());
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            channels: 2,
            cond_hidden: 3,
            cond_dims: 2,
            segment_samples: 1600,
            epochs: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = make_synthetic_dataset(2, (0.3, 0.3), &mut rng).unwrap();
        let cfg = tiny_config();
        let model = build_model(&cfg, &data).unwrap();
        let before = model.params.clone();
        let adam = AdamConfig {
            lr: 0.0,
            ..cfg.adam
        };
        let mut trainer = Trainer::with_adam(model, &cfg, adam).unwrap();
        for _ in 0..3 {
            trainer.step(&data).unwrap();
        }
        assert_eq!(trainer.model.params, before);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = make_synthetic_dataset(3, (0.3, 0.3), &mut rng).unwrap();
        let cfg = tiny_config();
        let run = || {
            let model = build_model(&cfg, &data[..2]).unwrap();
            train(model, &data[..2], &data[2..], &cfg, |_| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.last.params, b.last.params);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 2);
        assert_eq!(a.steps, 2);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = make_synthetic_dataset(1, (0.3, 0.3), &mut rng).unwrap();
        let cfg = tiny_config();
        let model = build_model(&cfg, &data).unwrap();
        assert!(train(model.clone(), &[], &data, &cfg, |_| {}).is_err());
        assert!(train(model, &data, &[], &cfg, |_| {}).is_err());
    }
}
