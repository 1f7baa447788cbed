//! Central-difference verification of hand-written backward passes.
//!
//! Runs in `f64` on the same layer code used for `f32` training.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{Mode, Network};
use super::ops::softmax_cross_entropy;
use super::{NnError, Param, Result, Tensor};

/// Something with a forward pass, a matching backward pass and parameters.
///
/// `forward` must be deterministic between calls (stochastic layers reseed).
pub trait Differentiable {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>>;
    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad: Tensor<f64>) -> Result<Tensor<f64>>;
    /// Parameters in a stable order, with display names.
    fn params_mut(&mut self) -> Vec<(String, &mut Param<f64>)>;
    /// Piecewise region of the last forward pass, if the function has kinks.
    /// Probes whose two evaluations leave the base region are skipped.
    fn switch_pattern(&self) -> Option<Vec<usize>> {
        None
    }
}

/// A network probed in a fixed mode; dropout masks repeat because the RNG is
/// reseeded on every forward call.
pub struct NetworkProbe {
    pub net: Network<f64>,
    pub mode: Mode,
    pub seed: u64,
}

impl Differentiable for NetworkProbe {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.net.forward(x.clone(), self.mode, &mut rng)
    }

    fn backward(&mut self, grad: Tensor<f64>) -> Result<Tensor<f64>> {
        self.net.backward(grad)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<f64>)> {
        let names: Vec<String> = self
            .net
            .named_params()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        names.into_iter().zip(self.net.params_mut()).collect()
    }

    fn switch_pattern(&self) -> Option<Vec<usize>> {
        Some(self.net.switch_pattern())
    }
}

/// Mean cross-entropy of a network ending in softmax, using the fused
/// softmax/cross-entropy gradient. The output is a one-element tensor.
pub struct LossProbe {
    pub net: Network<f64>,
    pub labels: Vec<usize>,
    pub mode: Mode,
    pub seed: u64,
    input: Option<Tensor<f64>>,
    pattern: Option<Vec<usize>>,
}

impl LossProbe {
    pub fn new(net: Network<f64>, labels: Vec<usize>, mode: Mode, seed: u64) -> Self {
        Self {
            net,
            labels,
            mode,
            seed,
            input: None,
            pattern: None,
        }
    }
}

impl Differentiable for LossProbe {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut scratch = self.net.clone();
        let out = scratch.loss_and_backward(x.clone(), &self.labels, self.mode, &mut rng)?;
        self.input = Some(x.clone());
        self.pattern = Some(scratch.switch_pattern());
        Tensor::from_vec(&[1], vec![out.mean_loss])
    }

    fn backward(&mut self, grad: Tensor<f64>) -> Result<Tensor<f64>> {
        let x = self
            .input
            .clone()
            .ok_or_else(|| NnError::State("backward before forward".into()))?;
        let upstream = grad.data()[0];
        let before: Vec<Tensor<f64>> = self
            .net
            .params_mut()
            .iter()
            .map(|p| p.grad.clone())
            .collect();
        self.net.zero_grad();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let out = self
            .net
            .loss_and_backward(x, &self.labels, self.mode, &mut rng)?;
        for (p, prior) in self.net.params_mut().into_iter().zip(before) {
            for (g, &old) in p.grad.data_mut().iter_mut().zip(prior.data()) {
                *g = old + upstream * *g;
            }
        }
        let mut input_grad = out.input_grad;
        input_grad
            .data_mut()
            .iter_mut()
            .for_each(|g| *g *= upstream);
        Ok(input_grad)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<f64>)> {
        let names: Vec<String> = self
            .net
            .named_params()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        names.into_iter().zip(self.net.params_mut()).collect()
    }

    fn switch_pattern(&self) -> Option<Vec<usize>> {
        self.pattern.clone()
    }
}

/// Fused softmax + cross-entropy on raw logits; no parameters.
pub struct SoftmaxCrossEntropyProbe {
    pub labels: Vec<usize>,
    grad: Option<Tensor<f64>>,
}

impl SoftmaxCrossEntropyProbe {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels, grad: None }
    }
}

impl Differentiable for SoftmaxCrossEntropyProbe {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (_, loss, grad) = softmax_cross_entropy(x, &self.labels)?;
        self.grad = Some(grad);
        Tensor::from_vec(&[1], vec![loss])
    }

    fn backward(&mut self, grad: Tensor<f64>) -> Result<Tensor<f64>> {
        let mut g = self
            .grad
            .clone()
            .ok_or_else(|| NnError::State("backward before forward".into()))?;
        g.data_mut().iter_mut().for_each(|v| *v *= grad.data()[0]);
        Ok(g)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<f64>)> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    /// Central-difference step.
    pub step: f64,
    /// Probe at most this many entries per tensor (chosen at random).
    pub max_probes: Option<usize>,
    pub check_input: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            step: 1e-5,
            max_probes: None,
            check_input: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub name: String,
    /// Entries compared.
    pub probes: usize,
    /// Entries whose ±step crossed a ReLU or max-pool switch.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorError>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    /// Within tolerance, with at most 1% of probes lost to kinks.
    pub fn passed(&self) -> bool {
        let (probes, skipped) = (self.probes(), self.skipped());
        self.max_rel_error <= self.tolerance && skipped * 100 <= probes + skipped
    }

    pub fn probes(&self) -> usize {
        self.tensors.iter().map(|t| t.probes).sum()
    }

    pub fn skipped(&self) -> usize {
        self.tensors.iter().map(|t| t.skipped).sum()
    }
}

/// `|a - n| / max(1, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1.0)
}

/// Compares analytic gradients of `Σ r·f(x)` (with fixed random `r`) against
/// central differences, over the input and every parameter.
pub fn grad_check<D: Differentiable + ?Sized>(
    model: &mut D,
    input: &Tensor<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let out = model.forward(input)?;
    let weights = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    let objective = |out: &Tensor<f64>| -> Result<f64> {
        if !out.all_finite() {
            return Err(NnError::NonFinite(
                "forward pass during gradient check".into(),
            ));
        }
        Ok(out
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum())
    };
    objective(&out)?;
    let base = model.switch_pattern();
    let crossed = |model: &D| model.switch_pattern() != base;

    for (_, p) in model.params_mut() {
        p.zero_grad();
    }
    let input_grad = model.backward(weights.clone())?;
    let param_grads: Vec<Tensor<f64>> = model
        .params_mut()
        .into_iter()
        .map(|(_, p)| p.grad.clone())
        .collect();
    if !input_grad.all_finite() || param_grads.iter().any(|g| !g.all_finite()) {
        return Err(NnError::NonFinite("analytic gradient".into()));
    }

    let h = opts.step;
    let mut pick = |len: usize| -> Vec<usize> {
        match opts.max_probes {
            Some(k) if k < len => {
                let mut idx = index::sample(&mut rng, len, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..len).collect(),
        }
    };
    let mut tensors = Vec::new();

    if opts.check_input {
        let probes = pick(input.len());
        let mut x = input.clone();
        let mut worst = 0.0f64;
        let mut skipped = 0;
        for &i in &probes {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let plus = objective(&model.forward(&x)?)?;
            let mut kinked = crossed(model);
            x.data_mut()[i] = orig - h;
            let minus = objective(&model.forward(&x)?)?;
            kinked |= crossed(model);
            x.data_mut()[i] = orig;
            if kinked {
                skipped += 1;
                continue;
            }
            worst = worst.max(relative_error(
                input_grad.data()[i],
                (plus - minus) / (2.0 * h),
            ));
        }
        tensors.push(TensorError {
            name: "input".into(),
            probes: probes.len() - skipped,
            skipped,
            max_rel_error: worst,
        });
    }

    let names: Vec<(String, usize)> = model
        .params_mut()
        .into_iter()
        .map(|(n, p)| (n, p.value.len()))
        .collect();
    for (pi, (name, len)) in names.into_iter().enumerate() {
        let probes = pick(len);
        let mut worst = 0.0f64;
        let mut skipped = 0;
        for &i in &probes {
            let nudge = |model: &mut D, delta: f64| -> f64 {
                let mut params = model.params_mut();
                let v = &mut params[pi].1.value.data_mut()[i];
                *v += delta;
                *v
            };
            let orig = nudge(model, 0.0);
            nudge(model, h);
            let plus = objective(&model.forward(input)?)?;
            let mut kinked = crossed(model);
            model.params_mut()[pi].1.value.data_mut()[i] = orig - h;
            let minus = objective(&model.forward(input)?)?;
            kinked |= crossed(model);
            model.params_mut()[pi].1.value.data_mut()[i] = orig;
            if kinked {
                skipped += 1;
                continue;
            }
            worst = worst.max(relative_error(
                param_grads[pi].data()[i],
                (plus - minus) / (2.0 * h),
            ));
        }
        tensors.push(TensorError {
            name,
            probes: probes.len() - skipped,
            skipped,
            max_rel_error: worst,
        });
    }

    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        tolerance: opts.tolerance,
    })
}

/// One named entry of [`layer_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub name: String,
    pub report: GradCheckReport,
}

/// Uniform values in ±[0.1, 1), keeping ReLU inputs clear of the kink.
fn signed_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mag = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            mag
        } else {
            -mag
        }
    })
}

/// Checks every layer kind on small random instances.
pub fn layer_suite(tolerance: f64, seed: u64) -> Result<Vec<SuiteRow>> {
    use super::{LayerConfig as L, Padding};

    let conv = |c, kh, kw, stride, padding| L::Conv2d {
        out_channels: c,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        padding,
        bias: true,
    };
    let cases: Vec<(&str, Vec<L>, Vec<usize>, Mode)> = vec![
        (
            "conv2d 3x3 same",
            vec![conv(3, 3, 3, 1, Padding::Same)],
            vec![2, 6, 5],
            Mode::Train,
        ),
        (
            "conv2d 1x3 valid s2",
            vec![conv(2, 1, 3, 2, Padding::Valid)],
            vec![2, 5, 7],
            Mode::Train,
        ),
        (
            "conv2d 3x1 same s2",
            vec![conv(2, 3, 1, 2, Padding::Same)],
            vec![1, 7, 4],
            Mode::Train,
        ),
        (
            "maxpool 2/2",
            vec![L::MaxPool {
                kernel: 2,
                stride: 2,
            }],
            vec![2, 6, 6],
            Mode::Train,
        ),
        (
            "maxpool 3/2",
            vec![L::MaxPool {
                kernel: 3,
                stride: 2,
            }],
            vec![2, 7, 7],
            Mode::Train,
        ),
        ("dense", vec![L::dense(4)], vec![7], Mode::Train),
        ("relu", vec![L::Relu], vec![12], Mode::Train),
        (
            "flatten",
            vec![L::Flatten, L::dense(3)],
            vec![2, 3, 3],
            Mode::Train,
        ),
        (
            "dropout infer",
            vec![L::Dropout { rate: 0.5 }],
            vec![10],
            Mode::Infer,
        ),
        (
            "dropout train",
            vec![L::Dropout { rate: 0.3 }],
            vec![10],
            Mode::Train,
        ),
        ("softmax", vec![L::Softmax], vec![6], Mode::Train),
        (
            "residual conv",
            vec![L::Residual {
                inner: vec![conv(2, 3, 3, 1, Padding::Same)],
            }],
            vec![2, 4, 4],
            Mode::Train,
        ),
        (
            "residual dense",
            vec![L::Residual {
                inner: vec![L::dense(5), L::dense(5)],
            }],
            vec![5],
            Mode::Train,
        ),
    ];
    let opts = GradCheckOptions {
        tolerance,
        seed,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (i, (name, stack, shape, mode)) in cases.into_iter().enumerate() {
        let net = Network::build(&stack, &shape, seed.wrapping_add(i as u64))?;
        let mut probe = NetworkProbe { net, mode, seed };
        let mut full = vec![2];
        full.extend(&shape);
        let x = signed_away_from_zero(&full, &mut rng);
        rows.push(SuiteRow {
            name: name.into(),
            report: grad_check(&mut probe, &x, &opts)?,
        });
    }
    let mut fused = SoftmaxCrossEntropyProbe::new(vec![3, 0, 5]);
    let logits = signed_away_from_zero(&[3, 6], &mut rng);
    rows.push(SuiteRow {
        name: "softmax+cross-entropy".into(),
        report: grad_check(&mut fused, &logits, &opts)?,
    });
    Ok(rows)
}
