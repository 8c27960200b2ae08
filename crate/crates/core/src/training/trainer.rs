//! The optimization loop.

use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarMap};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Sample;
use super::labels::{make_soft_labels, LabelMode};
use super::losses::{comp_loss, extra_loss, targets_tensor, LossWeights};
use super::matching::match_predictions;
use super::teacher::{mask_tensor, teacher_tokens, EmaTeacher};
use crate::error::{Error, Result};
use crate::imaging::{batch_tensor, Augment, Planar};
use crate::model::{save_checkpoint, seeded_var_builder, ModelConfig, UnicModel};

/// Everything that shapes a training run. Read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub augment: Augment,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_transformer: f64,
    pub weight_decay: f64,
    /// Epoch (0-based) from which both learning rates are multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    /// Epoch (0-based) from which confidence targets come from the teacher.
    pub label_switch_epoch: usize,
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            augment: Augment::default(),
            epochs: 50,
            batch_size: 16,
            lr_backbone: 1e-5,
            lr_transformer: 1e-4,
            weight_decay: 1e-4,
            lr_decay_epoch: 30,
            lr_decay_factor: 0.1,
            label_switch_epoch: 30,
            ema_decay: 0.999,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_backbone >= 0.0 && self.lr_transformer >= 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rates and weight decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1]");
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad("lr_decay_factor must be positive");
        }
        Ok(())
    }

    pub fn label_mode(&self, epoch: usize) -> LabelMode {
        if epoch >= self.label_switch_epoch {
            LabelMode::SelfDistill
        } else {
            LabelMode::Quality
        }
    }

    /// `(backbone, transformer)` learning rates for `epoch`.
    pub fn learning_rates(&self, epoch: usize) -> (f64, f64) {
        let f = if epoch >= self.lr_decay_epoch { self.lr_decay_factor } else { 1.0 };
        (self.lr_backbone * f, self.lr_transformer * f)
    }

    /// Whether the extrapolation loss takes part.
    pub fn uses_extra(&self) -> bool {
        self.model.margin() > 0 && self.loss.extra > 0.0
    }
}

/// Loss values of one optimizer step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    #[serde(rename = "L_comp")]
    pub comp: f64,
    #[serde(rename = "L_reg")]
    pub reg: f64,
    #[serde(rename = "L_IoU")]
    pub iou: f64,
    #[serde(rename = "L_focal")]
    pub focal: f64,
    #[serde(rename = "L_extra")]
    pub extra: f64,
}

impl StepLosses {
    fn accumulate(&mut self, other: &StepLosses, weight: f64) {
        self.comp += other.comp * weight;
        self.reg += other.reg * weight;
        self.iou += other.iou * weight;
        self.focal += other.focal * weight;
        self.extra += other.extra * weight;
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: StepLosses,
    pub lr_backbone: f64,
    pub lr_transformer: f64,
    pub label_mode: LabelMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<serde_json::Value>,
}

/// Student, teacher and optimizer state.
pub struct Trainer {
    cfg: TrainConfig,
    vars: VarMap,
    model: UnicModel,
    teacher: EmaTeacher,
    opt_backbone: AdamW,
    opt_transformer: AdamW,
    rng: ChaCha8Rng,
    epoch: usize,
}

fn sorted_vars(vars: &VarMap) -> Vec<(String, Var)> {
    let data = vars.data().lock().expect("var map poisoned");
    let mut v: Vec<_> = data.iter().map(|(k, var)| (k.clone(), var.clone())).collect();
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        Self::with_dtype(cfg, DType::F32)
    }

    pub fn with_dtype(cfg: TrainConfig, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let device = Device::Cpu;
        let vars = VarMap::new();
        let model = UnicModel::new(&cfg.model, seeded_var_builder(&vars, cfg.seed, dtype, &device))?;
        let teacher = EmaTeacher::new(&cfg.model, &vars, cfg.ema_decay, dtype, &device)?;
        let (backbone, transformer): (Vec<_>, Vec<_>) =
            sorted_vars(&vars).into_iter().partition(|(name, _)| name.starts_with("backbone."));
        let params = |lr| ParamsAdamW { lr, weight_decay: cfg.weight_decay, ..Default::default() };
        let (lr_b, lr_t) = cfg.learning_rates(0);
        let opt_backbone = AdamW::new(backbone.into_iter().map(|(_, v)| v).collect(), params(lr_b))?;
        let opt_transformer = AdamW::new(transformer.into_iter().map(|(_, v)| v).collect(), params(lr_t))?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self { cfg, vars, model, teacher, opt_backbone, opt_transformer, rng, epoch: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &UnicModel {
        &self.model
    }

    pub fn vars(&self) -> &VarMap {
        &self.vars
    }

    pub fn teacher(&self) -> &EmaTeacher {
        &self.teacher
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.cfg.model, &self.vars)
    }

    /// Builds the loss of one batch without touching any parameter.
    ///
    /// Returns the total loss tensor and its components.
    pub fn batch_loss(&self, batch: &[&Sample], inputs: &[Planar], mode: LabelMode) -> Result<(Tensor, StepLosses)> {
        let model = &self.model;
        let (dtype, device) = (model.dtype(), model.device().clone());
        let images = batch_tensor(inputs, dtype, &device)?;
        let (raw, z) = model.forward_with_tokens(&images)?;
        let sets = raw.to_sets()?;
        let gts: Vec<_> = batch.iter().map(|s| s.gts.clone()).collect();
        let assignments = sets
            .iter()
            .zip(&gts)
            .map(|(p, g)| match_predictions(p, g, &self.cfg.loss))
            .collect::<Result<Vec<_>>>()?;
        let n = self.cfg.model.anchors;
        let teacher_conf = match mode {
            LabelMode::Quality => None,
            LabelMode::SelfDistill => Some(self.teacher.model.forward(&images)?.confidences()?.detach()),
        };
        let teacher_rows: Option<Vec<Vec<f64>>> = match &teacher_conf {
            Some(t) => Some(t.to_dtype(DType::F64)?.to_vec2::<f64>()?),
            None => None,
        };
        let targets = batch
            .iter()
            .zip(&assignments)
            .enumerate()
            .map(|(i, (s, a))| {
                make_soft_labels(n, a, &s.scores, mode, teacher_rows.as_ref().map(|r| r[i].as_slice()))
            })
            .collect::<Result<Vec<_>>>()?;
        let targets = targets_tensor(&targets, dtype, &device)?;
        let comp = comp_loss(&raw.boxes, &raw.logits, &gts, &assignments, &targets, &self.cfg.loss)?;
        let [c, r, i, f] = comp.values()?;
        let mut losses = StepLosses { comp: c, reg: r, iou: i, focal: f, extra: 0.0 };
        let mut total = comp.total;
        if self.cfg.uses_extra() {
            let canvases: Vec<Planar> = batch.iter().map(|s| s.canvas_planar()).collect();
            let canvases = batch_tensor(&canvases, dtype, &device)?;
            let target = teacher_tokens(&self.teacher.model, &canvases)?;
            let layouts: Vec<_> = batch.iter().map(|s| s.layout.clone()).collect();
            let mask = mask_tensor(&layouts, dtype, &device)?;
            let extra = extra_loss(
                &z.tokens,
                &target,
                &mask,
                self.cfg.loss.extra_kind,
                self.cfg.loss.smooth_l1_delta,
            )?;
            losses.extra = extra.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !losses.extra.is_finite() {
                return Err(Error::NonFiniteLoss(format!("L_extra = {}", losses.extra)));
            }
            total = (total + (extra * self.cfg.loss.extra)?)?;
        }
        Ok((total, losses))
    }

    /// One optimizer step on `batch` followed by the teacher update.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<StepLosses> {
        let mode = self.cfg.label_mode(self.epoch);
        let inputs = batch
            .iter()
            .map(|s| {
                let mut p = s.input(&self.cfg.model)?;
                self.cfg.augment.apply(&mut p, &mut self.rng);
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        let (total, losses) = self.batch_loss(batch, &inputs, mode)?;
        let grads = total.backward()?;
        self.opt_backbone.step(&grads)?;
        self.opt_transformer.step(&grads)?;
        self.teacher.update(&self.vars)?;
        Ok(losses)
    }

    /// One pass over `samples` in a seeded random order; returns mean losses.
    pub fn train_epoch(&mut self, samples: &[Sample]) -> Result<EpochLog> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let (lr_b, lr_t) = self.cfg.learning_rates(self.epoch);
        self.opt_backbone.set_learning_rate(lr_b);
        self.opt_transformer.set_learning_rate(lr_t);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut mean = StepLosses::default();
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let step = self.train_step(&batch)?;
            mean.accumulate(&step, chunk.len() as f64 / samples.len() as f64);
        }
        let log = EpochLog {
            epoch: self.epoch,
            losses: mean,
            lr_backbone: lr_b,
            lr_transformer: lr_t,
            label_mode: self.cfg.label_mode(self.epoch),
            eval: None,
        };
        self.epoch += 1;
        Ok(log)
    }
}

/// Runs the configured number of epochs, checkpointing to `out` after each
/// one and appending to the JSONL `log` if given. `eval` is called after every
/// epoch and its value lands in the log line.
///
/// A non-finite loss aborts the run; `out` then holds the last good state.
pub fn train(
    cfg: TrainConfig,
    samples: &[Sample],
    out: &Path,
    log: Option<&Path>,
    mut eval: impl FnMut(&UnicModel, usize) -> Result<Option<serde_json::Value>>,
) -> Result<(Trainer, Vec<EpochLog>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut trainer = Trainer::new(cfg)?;
    trainer.save(out)?;
    let mut log_file = match log {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    let mut logs = Vec::new();
    for _ in 0..trainer.cfg.epochs {
        let mut entry = trainer.train_epoch(samples)?;
        trainer.save(out)?;
        entry.eval = eval(&trainer.model, entry.epoch)?;
        log::info!("epoch {} {}", entry.epoch, serde_json::to_string(&entry.losses)?);
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
            f.flush()?;
        }
        logs.push(entry);
    }
    Ok((trainer, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TrainConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
        let partial = TrainConfig::from_toml("epochs = 3\n[loss]\nextra_kind = \"kl\"\n").unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.loss.extra_kind, super::super::ExtraLossKind::Kl);
        assert_eq!(partial.batch_size, 16);
        assert!(TrainConfig::from_toml("batch_size = 0").is_err());
    }

    #[test]
    fn schedule_switches_together() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rates(29), (1e-5, 1e-4));
        let (b, t) = cfg.learning_rates(30);
        assert!((b - 1e-6).abs() < 1e-18 && (t - 1e-5).abs() < 1e-18);
        assert_eq!(cfg.label_mode(29), LabelMode::Quality);
        assert_eq!(cfg.label_mode(30), LabelMode::SelfDistill);
    }
}
