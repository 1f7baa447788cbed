//! Pooling, dense, activation, dropout and loss kernels on batched tensors.

use rand::Rng;

use super::{NnError, Result, Scalar, Tensor};

/// Max pooling over `kernel`×`kernel` windows without padding.
///
/// Returns the pooled tensor and, per output element, the flat input index of
/// the window maximum (first one in row-major order on ties).
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [_, _, out_h, out_w] = pool_output_shape(input.shape(), kernel, stride)?;
    let &[n, c, h, w] = input.shape() else {
        unreachable!()
    };
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let mut argmax = Vec::with_capacity(n * c * out_h * out_w);
    let src = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..kernel {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for idx in row..row + kernel {
                        if src[idx] > src[best] || (src[idx].is_nan() && !src[best].is_nan()) {
                            best = idx;
                        }
                    }
                }
                argmax.push(best);
            }
        }
    }
    for (o, &i) in out.data_mut().iter_mut().zip(&argmax) {
        *o = src[i];
    }
    Ok((out, argmax))
}

pub fn pool_output_shape(shape: &[usize], kernel: usize, stride: usize) -> Result<[usize; 4]> {
    let &[n, c, h, w] = shape else {
        return Err(NnError::Shape(format!(
            "max pooling expects N×C×H×W, got {shape:?}"
        )));
    };
    if stride == 0 || kernel == 0 {
        return Err(NnError::Config(
            "pooling kernel and stride must be at least 1".into(),
        ));
    }
    if kernel > h || kernel > w {
        return Err(NnError::Shape(format!(
            "pooling window {kernel} exceeds input {h}×{w}"
        )));
    }
    Ok([n, c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        g[i] += v;
    }
    grad
}

/// `out = input · weight + bias` for an N×n batch and n×m weights.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (rows, (n_in, n_out)) = dense_dims(input, weight)?;
    let mut out = Tensor::zeros(&[rows, n_out]);
    if let Some(bias) = bias {
        if bias.len() != n_out {
            return Err(NnError::Shape(format!(
                "dense bias has {} entries, expected {n_out}",
                bias.len()
            )));
        }
        for row in out.data_mut().chunks_exact_mut(n_out) {
            row.copy_from_slice(bias.data());
        }
    }
    T::gemm(
        rows,
        n_in,
        n_out,
        T::one(),
        input.data(),
        (n_in as isize, 1),
        weight.data(),
        (n_out as isize, 1),
        T::one(),
        out.data_mut(),
        (n_out as isize, 1),
    );
    Ok(out)
}

fn dense_dims<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, (usize, usize))> {
    let &[n_in, n_out] = weight.shape() else {
        return Err(NnError::Shape(format!(
            "dense weight must be 2-D, got {:?}",
            weight.shape()
        )));
    };
    match input.shape() {
        &[rows, cols] if cols == n_in => Ok((rows, (n_in, n_out))),
        s => Err(NnError::Shape(format!(
            "dense layer expects N×{n_in} input, got {s:?}"
        ))),
    }
}

/// Accumulates `inputᵀ·grad_out` and column sums into the parameter gradients
/// and returns `grad_out · weightᵀ`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    weight_grad: &mut Tensor<T>,
    bias_grad: Option<&mut Tensor<T>>,
) -> Result<Tensor<T>> {
    let (rows, (n_in, n_out)) = dense_dims(input, weight)?;
    if grad_out.shape() != [rows, n_out] {
        return Err(NnError::Shape(format!(
            "dense upstream gradient {:?} != [{rows}, {n_out}]",
            grad_out.shape()
        )));
    }
    T::gemm(
        n_in,
        rows,
        n_out,
        T::one(),
        input.data(),
        (1, n_in as isize),
        grad_out.data(),
        (n_out as isize, 1),
        T::one(),
        weight_grad.data_mut(),
        (n_out as isize, 1),
    );
    if let Some(bg) = bias_grad {
        for row in grad_out.data().chunks_exact(n_out) {
            for (b, &g) in bg.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
    }
    let mut grad_in = Tensor::zeros(&[rows, n_in]);
    T::gemm(
        rows,
        n_out,
        n_in,
        T::one(),
        grad_out.data(),
        (n_out as isize, 1),
        weight.data(),
        (1, n_out as isize),
        T::zero(),
        grad_in.data_mut(),
        (n_in as isize, 1),
    );
    Ok(grad_in)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    relu_in_place(input.clone())
}

pub fn relu_in_place<T: Scalar>(mut x: Tensor<T>) -> Tensor<T> {
    // written as a comparison so NaN passes through
    x.data_mut()
        .iter_mut()
        .filter(|v| **v < T::zero())
        .for_each(|v| *v = T::zero());
    x
}

/// Passes the gradient where the forward input was positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    grad
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(
    len: usize,
    rate: f64,
    rng: &mut R,
) -> Result<Vec<T>> {
    check_dropout_rate(rate)?;
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    Ok((0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect())
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Config(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Row-wise softmax over the last axis, stabilized by subtracting the row max.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = *logits
        .shape()
        .last()
        .expect("softmax input has at least one axis");
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Vector-Jacobian product of softmax given its output.
pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let k = *probs
        .shape()
        .last()
        .expect("softmax output has at least one axis");
    let mut grad = grad_out.clone();
    for (g, p) in grad
        .data_mut()
        .chunks_exact_mut(k)
        .zip(probs.data().chunks_exact(k))
    {
        let mut dot = T::zero();
        for (&gi, &pi) in g.iter().zip(p) {
            dot += gi * pi;
        }
        for (gi, &pi) in g.iter_mut().zip(p) {
            *gi = pi * (*gi - dot);
        }
    }
    grad
}

/// Floor applied to the true-class probability before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln p[label]` for one probability vector.
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        NnError::Shape(format!(
            "label {label} out of range for {} classes",
            probs.len()
        ))
    })?;
    let p = p.as_f64();
    // f64::max would hide a NaN probability behind the floor
    if p.is_nan() {
        return Ok(f64::NAN);
    }
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Fused softmax + cross-entropy over a batch of logits. Returns the
/// probabilities, the mean loss and the gradient of the mean loss with
/// respect to the logits, `(probs - onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(Tensor<T>, f64, Tensor<T>)> {
    let &[n, k] = logits.shape() else {
        return Err(NnError::Shape(format!(
            "expected N×K logits, got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != n {
        return Err(NnError::Shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    let probs = softmax(logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    let scale = T::from_f64_lossy(1.0 / n as f64);
    for ((row, g), &label) in probs
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k))
        .zip(labels)
    {
        loss += cross_entropy(row, label)?;
        g[label] -= T::one();
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((probs, loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn maxpool_two_by_two() {
        let (out, arg) = maxpool_forward(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), 2, 2).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn overlapping_pool_shape() {
        let input = Tensor::<f64>::from_fn(&[1, 1, 5, 5], |i| i as f64);
        let (out, _) = maxpool_forward(&input, 3, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[12.0, 14.0, 22.0, 24.0]);
        assert!(maxpool_forward(&input, 6, 1).is_err());
    }

    #[test]
    fn maxpool_ties_pick_first() {
        let (_, arg) = maxpool_forward(&t(&[1, 1, 2, 2], &[5.0, 5.0, 5.0, 5.0]), 2, 2).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn maxpool_backward_conserves_mass() {
        let input = Tensor::<f64>::from_fn(&[2, 3, 7, 7], |i| ((i * 37) % 101) as f64);
        let (out, arg) = maxpool_forward(&input, 3, 2).unwrap();
        let upstream = Tensor::from_fn(out.shape(), |i| (i as f64).sin());
        let g = maxpool_backward(input.shape(), &arg, &upstream);
        let (a, b): (f64, f64) = (g.data().iter().sum(), upstream.data().iter().sum());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn dense_by_hand() {
        let out = dense_forward(
            &t(&[1, 2], &[1.0, 2.0]),
            &t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            Some(&t(&[2], &[3.0, 3.0])),
        )
        .unwrap();
        assert_eq!(out.data(), &[4.0, 5.0]);
        assert!(dense_forward(&t(&[1, 3], &[0.0; 3]), &t(&[2, 2], &[0.0; 4]), None).is_err());
    }

    #[test]
    fn dense_weight_grad_is_outer_product() {
        let input = t(&[1, 3], &[1.0, -2.0, 0.5]);
        let w = Tensor::zeros(&[3, 2]);
        let upstream = t(&[1, 2], &[4.0, -1.0]);
        let mut wg = Tensor::zeros(&[3, 2]);
        let mut bg = Tensor::zeros(&[2]);
        dense_backward(&input, &w, &upstream, &mut wg, Some(&mut bg)).unwrap();
        assert_eq!(wg.data(), &[4.0, -1.0, -8.0, 2.0, 2.0, -0.5]);
        assert_eq!(bg.data(), &[4.0, -1.0]);
    }

    #[test]
    fn relu_values() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&t(&[2], &[-0.5, 0.5]), &t(&[2], &[1.0, 1.0]));
        assert_eq!(g.data(), &[0.0, 1.0]);
    }

    #[test]
    fn dropout_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m: Vec<f64> = dropout_mask(1000, 0.0, &mut rng).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
        let m: Vec<f64> = dropout_mask(100_000, 0.5, &mut rng).unwrap();
        let zeroed = m.iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeroed - 0.5).abs() < 0.01, "{zeroed}");
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(dropout_mask::<f64, _>(4, 1.0, &mut rng).is_err());
    }

    #[test]
    fn softmax_uniform_and_shift() {
        let p = softmax(&Tensor::<f64>::zeros(&[1, 36]));
        assert!(p.data().iter().all(|&v| (v - 1.0 / 36.0).abs() < 1e-15));
        let z = t(&[1, 4], &[1.0, -3.0, 800.0, 2.5]);
        let shifted = t(&[1, 4], &[11.0, 7.0, 810.0, 12.5]);
        let (a, b) = (softmax(&z), softmax(&shifted));
        assert!(a.all_finite());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_anchors() {
        let uniform = vec![1.0 / 36.0; 36];
        assert!((cross_entropy(&uniform, 5).unwrap() - 36f64.ln()).abs() < 1e-12);
        assert_eq!(cross_entropy(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn nan_is_not_masked() {
        assert!(cross_entropy(&[f64::NAN, 0.5], 0).unwrap().is_nan());
        assert!(relu(&t(&[2], &[f64::NAN, -1.0])).data()[0].is_nan());
        let (out, _) =
            maxpool_forward(&t(&[1, 1, 2, 2], &[1.0, f64::NAN, 3.0, 4.0]), 2, 2).unwrap();
        assert!(out.data()[0].is_nan());
    }

    #[test]
    fn fused_gradient_is_probs_minus_onehot() {
        let logits = t(&[1, 3], &[0.2, -1.0, 0.7]);
        let (p, _, g) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert_eq!(g.data()[0], p.data()[0]);
        assert_eq!(g.data()[1], p.data()[1]);
        assert!((g.data()[2] - (p.data()[2] - 1.0)).abs() < 1e-15);
    }
}
