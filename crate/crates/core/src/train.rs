//! Training loop, evaluation and single-image prediction.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{preprocess_entry, DataError, Entry, LabelMap, Split};
use crate::imaging::{load_image, run_pipeline, ImageError, PipelineConfig};
use crate::model::{argmax, Model, ModelError};
use crate::nn::ops::cross_entropy;
use crate::nn::{Adam, Mode, NnError, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("failed to read {path}: {source}")]
    Image {
        path: std::path::PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("non-finite loss in epoch {epoch}, batch {batch} (samples {first}..{end})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        first: usize,
        end: usize,
    },
    #[error("parameter {name} became non-finite after epoch {epoch}")]
    NonFiniteParams { epoch: usize, name: String },
}

impl TrainError {
    /// True for divergence failures as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Self::NonFiniteLoss { .. } | Self::NonFiniteParams { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub const CSV_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

/// Renders a metrics history as CSV, header first.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for m in history {
        let _ = writeln!(
            out,
            "{},{:.8},{:.6},{:.8},{:.6}",
            m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc
        );
    }
    out
}

/// Preprocessed samples held in memory, one flat row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    item_shape: [usize; 3],
    inputs: Vec<f32>,
    labels: Vec<usize>,
}

impl SampleSet {
    /// Runs every entry through the pipeline once.
    pub fn load(entries: &[Entry], pipeline: &PipelineConfig) -> Result<Self> {
        let s = pipeline.model_input_size;
        let mut inputs = Vec::with_capacity(entries.len() * s * s);
        for e in entries {
            inputs.extend(preprocess_entry(&e.path, pipeline)?);
        }
        let labels = entries.iter().map(|e| e.label).collect();
        Self::from_parts([1, s, s], inputs, labels)
    }

    pub fn from_parts(
        item_shape: [usize; 3],
        inputs: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let item: usize = item_shape.iter().product();
        if inputs.len() != item * labels.len() {
            return Err(NnError::Shape(format!(
                "{} values do not hold {} samples of shape {item_shape:?}",
                inputs.len(),
                labels.len()
            ))
            .into());
        }
        Ok(Self {
            item_shape,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn item_shape(&self) -> [usize; 3] {
        self.item_shape
    }

    /// Gathers the given sample indices into an `N×C×H×W` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let item: usize = self.item_shape.iter().product();
        let mut data = Vec::with_capacity(indices.len() * item);
        for &i in indices {
            data.extend_from_slice(&self.inputs[i * item..(i + 1) * item]);
        }
        let [c, h, w] = self.item_shape;
        let x = Tensor::from_vec(&[indices.len(), c, h, w], data)
            .expect("sizes checked at construction");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

const EVAL_CHUNK: usize = 64;

/// Top-1 accuracy and mean cross-entropy over preprocessed samples, dropout off.
pub fn evaluate_set(model: &Model, set: &SampleSet) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(TrainError::Empty("evaluation set"));
    }
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, labels) = set.batch(chunk);
        let probs = model.predict_batch(&x)?;
        let k = model.num_classes();
        for (row, &label) in probs.data().chunks_exact(k).zip(&labels) {
            loss += cross_entropy(row, label)?;
            correct += usize::from(argmax(row) == label);
        }
    }
    let n = set.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Loads, preprocesses and evaluates `entries`.
pub fn evaluate(model: &Model, entries: &[Entry], pipeline: &PipelineConfig) -> Result<(f64, f64)> {
    if entries.is_empty() {
        return Err(TrainError::Empty("evaluation set"));
    }
    evaluate_set(model, &SampleSet::load(entries, pipeline)?)
}

/// Stateful trainer that advances one epoch at a time.
#[derive(Debug)]
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    train: SampleSet,
    val: SampleSet,
    order: Vec<usize>,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, train: SampleSet, val: SampleSet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(TrainError::Empty("training set"));
        }
        if val.is_empty() {
            return Err(TrainError::Empty("validation set"));
        }
        let expect = model.config().input_shape();
        if train.item_shape() != expect || val.item_shape() != expect {
            return Err(NnError::Shape(format!(
                "samples are {:?} but the model takes {expect:?}",
                train.item_shape()
            ))
            .into());
        }
        let k = model.num_classes();
        if let Some(&bad) = train.labels().iter().chain(val.labels()).find(|&&l| l >= k) {
            return Err(TrainError::Config(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            order: (0..train.len()).collect(),
            model,
            cfg,
            adam: Adam::default(),
            train,
            val,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One optimizer step on the given training-set indices; returns the batch loss.
    pub fn step(&mut self, indices: &[usize]) -> Result<f64> {
        let (x, labels) = self.train.batch(indices);
        let net = self.model.network_mut();
        net.zero_grad();
        let out = net.loss_and_backward(x, &labels, Mode::Train, &mut self.rng)?;
        net.clear_cache();
        if !out.mean_loss.is_finite() {
            return Ok(out.mean_loss);
        }
        self.adam
            .step(&mut net.params_mut(), self.cfg.learning_rate)?;
        Ok(out.mean_loss)
    }

    /// Shuffles, trains over every mini-batch (the last may be partial),
    /// then scores both sets in inference mode.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epoch + 1;
        if self.cfg.shuffle {
            self.order.shuffle(&mut self.rng);
        }
        let order = std::mem::take(&mut self.order);
        for (batch, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let loss = self.step(idx)?;
            if !loss.is_finite() {
                let first = batch * self.cfg.batch_size;
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch,
                    first,
                    end: first + idx.len(),
                });
            }
        }
        self.order = order;
        if let Some((name, _)) = self
            .model
            .network()
            .named_params()
            .into_iter()
            .find(|(_, p)| !p.value.all_finite())
        {
            return Err(TrainError::NonFiniteParams { epoch, name });
        }
        let (train_acc, train_loss) = evaluate_set(&self.model, &self.train)?;
        let (val_acc, val_loss) = evaluate_set(&self.model, &self.val)?;
        self.epoch = epoch;
        Ok(EpochMetrics {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        })
    }
}

/// Trains for `cfg.epochs` epochs, calling `on_epoch` after each one.
pub fn train_with<F>(
    model: Model,
    split: &Split,
    pipeline: &PipelineConfig,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(Vec<EpochMetrics>, Model)>
where
    F: FnMut(&EpochMetrics, &Model) -> Result<()>,
{
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(TrainError::Empty("split"));
    }
    let train = SampleSet::load(&split.train, pipeline)?;
    let val = SampleSet::load(&split.val, pipeline)?;
    let mut trainer = Trainer::new(model, train, val, cfg.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let m = trainer.run_epoch()?;
        on_epoch(&m, trainer.model())?;
        history.push(m);
    }
    Ok((history, trainer.into_model()))
}

pub fn train_epochs(
    model: Model,
    split: &Split,
    pipeline: &PipelineConfig,
    cfg: &TrainConfig,
) -> Result<(Vec<EpochMetrics>, Model)> {
    train_with(model, split, pipeline, cfg, |_, _| Ok(()))
}

/// Classifies one image file; returns the label name and its probability.
pub fn predict_image(
    model: &Model,
    labels: &LabelMap,
    path: impl AsRef<Path>,
    pipeline: &PipelineConfig,
) -> Result<(String, f32)> {
    let path = path.as_ref();
    if labels.len() != model.num_classes() {
        return Err(TrainError::Config(format!(
            "label map has {} classes, model outputs {}",
            labels.len(),
            model.num_classes()
        )));
    }
    let wrap = |source| TrainError::Image {
        path: path.to_path_buf(),
        source,
    };
    let img = load_image(path).map_err(wrap)?;
    let gray = run_pipeline(&img, pipeline).map_err(wrap)?;
    let (w, h) = gray.dimensions();
    let x = Tensor::from_vec(
        &[1, 1, h, w],
        gray.pixels().iter().map(|&p| p as f32 / 255.0).collect(),
    )?;
    let out = model.forward_classify(&x)?;
    let name = labels.names()[out.top_label].clone();
    Ok((name, out.probs[out.top_label]))
}
