//! The 36-class sign classifier and its checkpoint format.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC, VERSION,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::gradcheck::LossProbe;
use crate::nn::{
    grad_check, GradCheckOptions, GradCheckReport, LayerConfig, Mode, Network, NnError, Padding,
    Tensor,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),
    #[error("checkpoint is truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checkpoint holds {found} tensors, model expects {expected}")]
    TensorCount { expected: usize, found: usize },
    #[error("tensor {name} has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint tensor {0} does not belong to the model")]
    UnknownTensor(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture of the classifier: two convolution pairs with max pooling, a
/// dropout after the first pooling stage, a hidden dense layer and a softmax
/// output over the sign classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IslCnnConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub block1_filters: usize,
    pub block2_filters: usize,
    pub kernel_size: usize,
    pub padding: Padding,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub dropout_rate: f64,
    pub dense_units: usize,
    pub num_classes: usize,
}

impl Default for IslCnnConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            input_size: 100,
            block1_filters: 32,
            block2_filters: 64,
            kernel_size: 3,
            padding: Padding::Same,
            pool_kernel: 2,
            pool_stride: 2,
            dropout_rate: 0.25,
            dense_units: 512,
            num_classes: 36,
        }
    }
}

impl IslCnnConfig {
    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_channels, self.input_size, self.input_size]
    }

    pub fn layers(&self) -> Vec<LayerConfig> {
        let k = self.kernel_size;
        let conv = |filters| LayerConfig::conv(filters, k, k, self.padding);
        let pool = LayerConfig::MaxPool {
            kernel: self.pool_kernel,
            stride: self.pool_stride,
        };
        vec![
            conv(self.block1_filters),
            LayerConfig::Relu,
            conv(self.block1_filters),
            LayerConfig::Relu,
            pool.clone(),
            LayerConfig::Dropout {
                rate: self.dropout_rate,
            },
            conv(self.block2_filters),
            LayerConfig::Relu,
            conv(self.block2_filters),
            LayerConfig::Relu,
            pool,
            LayerConfig::Flatten,
            LayerConfig::dense(self.dense_units),
            LayerConfig::Relu,
            LayerConfig::dense(self.num_classes),
            LayerConfig::Softmax,
        ]
    }

    /// The same architecture shrunk to a 1×20×20 input, cheap enough for
    /// exhaustive finite-difference checking.
    pub fn reduced() -> Self {
        Self {
            input_size: 20,
            block1_filters: 4,
            block2_filters: 6,
            dense_units: 16,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(ModelError::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        crate::nn::stack_output_shape(&self.layers(), &self.input_shape())?;
        Ok(())
    }
}

/// Output of a single-image classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub probs: Vec<f32>,
    pub top_label: usize,
}

/// The classifier: its configuration plus an `f32` network.
#[derive(Debug, Clone)]
pub struct Model {
    config: IslCnnConfig,
    net: Network<f32>,
}

/// Builds the classifier with freshly initialized parameters.
pub fn build_isl_cnn(config: &IslCnnConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let net = Network::build(&config.layers(), &config.input_shape(), seed)?;
    Ok(Model {
        config: config.clone(),
        net,
    })
}

impl Model {
    pub fn config(&self) -> &IslCnnConfig {
        &self.config
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.net
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Class probabilities for a batch shaped `N×C×H×W`; dropout is off.
    pub fn predict_batch(&self, inputs: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.net.predict(inputs)?)
    }

    /// Classifies one `C×H×W` (or `1×C×H×W`) input.
    pub fn forward_classify(&self, input: &Tensor<f32>) -> Result<Classification> {
        let shape = self.config.input_shape();
        let batched = match input.shape() {
            s if s == shape => input.clone().reshape(&[1, shape[0], shape[1], shape[2]])?,
            s if s.len() == 4 && s[0] == 1 && s[1..] == shape => input.clone(),
            s => {
                return Err(NnError::Shape(format!(
                    "classifier expects {shape:?} input, got {s:?}"
                ))
                .into());
            }
        };
        let probs = self.predict_batch(&batched)?.into_data();
        let top_label = argmax(&probs);
        Ok(Classification { probs, top_label })
    }
}

/// Gradient check of the reduced model's training loss (dropout active with a
/// fixed mask) over every input pixel and parameter, in `f64`.
pub fn gradcheck_reduced(tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    let cfg = IslCnnConfig::reduced();
    let net = Network::<f64>::build(&cfg.layers(), &cfg.input_shape(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[2, 1, cfg.input_size, cfg.input_size], |_| {
        rng.random_range(0.0..1.0)
    });
    let labels = vec![3, cfg.num_classes - 1];
    let mut probe = LossProbe::new(net, labels, Mode::Train, seed);
    let opts = GradCheckOptions {
        tolerance,
        seed,
        ..Default::default()
    };
    Ok(grad_check(&mut probe, &x, &opts)?)
}

/// Index of the largest value, first on ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
