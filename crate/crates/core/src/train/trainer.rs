use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{CheckpointRecord, FORMAT_VERSION};
use super::{augment_sample, AugmentConfig, HardMiningConfig, Sampler, TrainError};
use crate::arch::{argmax_labels, Model, ModelConfig, ParamStore};
use crate::data::{Dataset, Sample};
use crate::eval::{confusion, ConfusionMatrix};
use crate::tensor::{Graph, SgdMomentum, SgdParams, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_iterations: u64,
    pub checkpoint_interval: u64,
    /// Taken from the run config's top-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub augmentation: AugmentConfig,
    pub hard_mining: HardMiningConfig,
}

impl Default for TrainConfig {
    /// Desk scale: a few minutes on one CPU core.
    fn default() -> Self {
        Self {
            batch_size: 4,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            total_iterations: 2000,
            checkpoint_interval: 500,
            seed: 0,
            augmentation: AugmentConfig::default(),
            hard_mining: HardMiningConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The long schedule: batch 12, 100k iterations, a checkpoint every 20k.
    pub fn full_schedule() -> Self {
        Self {
            batch_size: 12,
            total_iterations: 100_000,
            checkpoint_interval: 20_000,
            ..Self::default()
        }
    }

    pub fn sgd(&self) -> SgdParams {
        SgdParams {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.total_iterations == 0 || self.checkpoint_interval == 0 {
            return bad("batch_size, total_iterations and checkpoint_interval must be at least 1".into());
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum = {} must lie in [0, 1)", self.momentum));
        }
        self.augmentation.validate()?;
        self.hard_mining.validate()
    }

    /// Whether a validation pass and checkpoint follow iteration `i`.
    pub fn is_checkpoint(&self, i: u64) -> bool {
        i % self.checkpoint_interval == 0 || i == self.total_iterations
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// `(iteration, mean cross-entropy)`, iterations counted from 1.
    pub losses: Vec<(u64, f32)>,
    /// `(iteration, validation IoU %)` at each checkpoint.
    pub validations: Vec<(u64, f64)>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best: CheckpointRecord,
    pub history: TrainHistory,
    /// Parameters after the last iteration.
    pub model: Model<f32>,
}

/// Stacks samples into a `(B, C, t, t)` batch and its flattened labels.
pub fn stack_batch<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<(Tensor<f32>, Vec<u8>), TrainError> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut shape = None;
    let mut count = 0;
    for s in samples {
        let sh = s.image.shape();
        if *shape.get_or_insert(sh) != sh {
            return Err(TrainError::Config(format!("sample {} has shape {sh}, batch has {}", s.id, shape.unwrap())));
        }
        data.extend_from_slice(s.image.data());
        labels.extend_from_slice(&s.mask);
        count += 1;
    }
    let sh = shape.ok_or(TrainError::EmptyDataset("batch"))?;
    Ok((Tensor::from_vec([count, sh.channels, sh.height, sh.width], data)?, labels))
}

/// Confusion counts of the model's arg-max prediction over a dataset.
pub fn evaluate_dataset(model: &Model<f32>, dataset: &Dataset, batch_size: usize) -> Result<ConfusionMatrix, TrainError> {
    let mut total = ConfusionMatrix::default();
    for chunk in dataset.samples.chunks(batch_size.max(1)) {
        let (x, truth) = stack_batch(chunk)?;
        let pred = argmax_labels(&model.logits(&x)?);
        total += confusion(&pred, &truth)?;
    }
    Ok(total)
}

/// IoU in percent; a dataset with no positives predicted or present
/// counts as perfect.
pub fn selection_iou(cm: &ConfusionMatrix) -> f64 {
    let den = cm.tp + cm.fp + cm.fn_;
    if den == 0 {
        100.0
    } else {
        100.0 * cm.tp as f64 / den as f64
    }
}

/// Rebuilds a model from a checkpoint's parameter table.
pub fn model_from_record(config: &ModelConfig, record: &CheckpointRecord) -> Result<Model<f32>, TrainError> {
    let mut store = ParamStore::new();
    for (name, t) in &record.params {
        store.insert(name.clone(), t.clone(), false);
    }
    Ok(Model::from_params(config, store)?)
}

pub struct Trainer<'a> {
    config: TrainConfig,
    model: Model<f32>,
    optimizer: SgdMomentum<f32>,
    train: &'a Dataset,
    val: &'a Dataset,
    sampler: Sampler,
    iteration: u64,
    history: TrainHistory,
    best: Option<CheckpointRecord>,
    checkpoint_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model<f32>, train: &'a Dataset, val: &'a Dataset, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if val.is_empty() {
            return Err(TrainError::EmptyDataset("validation"));
        }
        let sampler = Sampler::new(train, &config.hard_mining)?;
        Ok(Self {
            optimizer: SgdMomentum::new(config.sgd()),
            config,
            model,
            train,
            val,
            sampler,
            iteration: 0,
            history: TrainHistory::default(),
            best: None,
            checkpoint_dir: None,
        })
    }

    /// Continues from a checkpoint: parameters, velocities and iteration
    /// count are restored, and the generator streams pick up where they were.
    pub fn resume(
        model_config: &ModelConfig,
        record: &CheckpointRecord,
        train: &'a Dataset,
        val: &'a Dataset,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        if record.fingerprint != model_config.fingerprint() {
            return Err(TrainError::Config(format!(
                "checkpoint fingerprint {:016x} does not match the model config {:016x}",
                record.fingerprint,
                model_config.fingerprint()
            )));
        }
        let model = model_from_record(model_config, record)?;
        let mut t = Self::new(model, train, val, config)?;
        t.optimizer = SgdMomentum::with_velocities(t.config.sgd(), record.velocities.clone());
        t.iteration = record.iteration;
        Ok(t)
    }

    /// Writes `ckpt_<iteration>.daun` and `best.daun` under `dir`.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    /// Seeds best-model selection, e.g. with the best record of an earlier session.
    pub fn with_best(mut self, best: Option<CheckpointRecord>) -> Self {
        self.best = best;
        self
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn best(&self) -> Option<&CheckpointRecord> {
        self.best.as_ref()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One iteration: sample, augment, forward, loss, backward, update.
    /// Returns the loss.
    pub fn step(&mut self) -> Result<f32, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.iteration);
        let picks = self.sampler.draw(self.config.batch_size, &mut rng);
        let batch: Vec<Sample> = picks
            .iter()
            .map(|&i| augment_sample(&self.train.samples[i], &self.config.augmentation, &mut rng))
            .collect();
        let (x, labels) = stack_batch(&batch)?;

        let mut g = Graph::new();
        let bound = self.model.bind(&mut g, true);
        let input = g.constant(x);
        let logits = self.model.forward(&mut g, &bound, input)?;
        let loss_var = g.softmax_cross_entropy(logits, &labels)?;
        let loss = g.value(loss_var).item();
        self.iteration += 1;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                iteration: self.iteration,
                loss,
            });
        }
        g.backward(loss_var)?;
        let grads = self.model.collect_grads(&g, &bound);
        for ((name, p), grad) in self.model.params_mut().iter_mut().zip(&grads) {
            self.optimizer.step(name, &mut p.value, grad, p.decay)?;
        }
        self.history.losses.push((self.iteration, loss));
        if self.config.is_checkpoint(self.iteration) {
            self.checkpoint()?;
        }
        Ok(loss)
    }

    /// Snapshot of the current state with `validation_metric` left at NaN.
    pub fn snapshot(&self) -> CheckpointRecord {
        CheckpointRecord {
            format_version: FORMAT_VERSION,
            iteration: self.iteration,
            validation_metric: f64::NAN,
            fingerprint: self.model.config().fingerprint(),
            params: self
                .model
                .params()
                .iter()
                .map(|(n, p)| (n.to_owned(), p.value.clone()))
                .collect::<IndexMap<_, _>>(),
            velocities: self.optimizer.velocities().clone(),
        }
    }

    /// Validates, records and (if a directory is set) persists a checkpoint.
    pub fn checkpoint(&mut self) -> Result<CheckpointRecord, TrainError> {
        let cm = evaluate_dataset(&self.model, self.val, self.config.batch_size)?;
        let iou = selection_iou(&cm);
        let record = CheckpointRecord {
            validation_metric: iou,
            ..self.snapshot()
        };
        self.history.validations.push((self.iteration, iou));
        let improved = self.best.as_ref().is_none_or(|b| iou > b.validation_metric);
        if let Some(dir) = &self.checkpoint_dir {
            record.save(&checkpoint_path(dir, self.iteration))?;
            if improved {
                record.save(&dir.join(BEST_CHECKPOINT))?;
            }
        }
        if improved {
            self.best = Some(record.clone());
        }
        Ok(record)
    }

    /// Steps until `iteration` (capped at the configured total).
    pub fn run_until(&mut self, iteration: u64) -> Result<(), TrainError> {
        while self.iteration < iteration.min(self.config.total_iterations) {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<TrainOutcome, TrainError> {
        if self.best.is_none() {
            self.checkpoint()?;
        }
        Ok(TrainOutcome {
            best: self.best.expect("set by checkpoint"),
            history: self.history,
            model: self.model,
        })
    }
}

pub const BEST_CHECKPOINT: &str = "best.daun";

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("ckpt_{iteration:08}.daun"))
}

/// Runs the full schedule and returns the best checkpoint.
pub fn train(model: Model<f32>, train: &Dataset, val: &Dataset, config: TrainConfig) -> Result<TrainOutcome, TrainError> {
    let total = config.total_iterations;
    let mut trainer = Trainer::new(model, train, val, config)?;
    trainer.run_until(total)?;
    trainer.finish()
}
