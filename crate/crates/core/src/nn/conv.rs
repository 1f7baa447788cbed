//! 2-D convolution lowered to matrix products (im2col / col2im).

use serde::{Deserialize, Serialize};

use super::{NnError, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Same,
    Valid,
}

/// Resolved shapes and offsets of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// `same` padding produces `ceil(in / stride)` outputs and splits the
    /// required padding with the smaller half on the top/left.
    pub fn new(
        input: [usize; 3],
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [in_channels, in_h, in_w] = input;
        if stride == 0 {
            return Err(NnError::Config(
                "convolution stride must be at least 1".into(),
            ));
        }
        if kernel_h == 0 || kernel_w == 0 || out_channels == 0 || in_channels == 0 {
            return Err(NnError::Config(
                "convolution extents must be non-zero".into(),
            ));
        }
        let axis = |size: usize, k: usize| -> Result<(usize, usize)> {
            match padding {
                Padding::Valid => {
                    if k > size {
                        return Err(NnError::Shape(format!(
                            "kernel extent {k} exceeds input extent {size}"
                        )));
                    }
                    Ok(((size - k) / stride + 1, 0))
                }
                Padding::Same => {
                    let out = size.div_ceil(stride);
                    let total = ((out - 1) * stride + k).saturating_sub(size);
                    if k > size + total {
                        return Err(NnError::Shape(format!(
                            "kernel extent {k} exceeds padded input extent {}",
                            size + total
                        )));
                    }
                    Ok((out, total / 2))
                }
            }
        };
        let (out_h, pad_top) = axis(in_h, kernel_h)?;
        let (out_w, pad_left) = axis(in_w, kernel_w)?;
        Ok(Self {
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    /// Rows of the unfolded patch matrix: one per (channel, ky, kx).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    fn check_input<T: Scalar>(&self, input: &Tensor<T>) -> Result<()> {
        let s = input.shape();
        if s.len() != 4 || s[1..] != [self.in_channels, self.in_h, self.in_w] {
            return Err(NnError::Shape(format!(
                "convolution expects N×{}×{}×{}, got {s:?}",
                self.in_channels, self.in_h, self.in_w
            )));
        }
        Ok(())
    }

    /// Source index along one axis, or `None` when it falls in the padding.
    #[inline]
    fn source(out: usize, k: usize, stride: usize, pad: usize, size: usize) -> Option<usize> {
        (out * stride + k).checked_sub(pad).filter(|&v| v < size)
    }

    /// Output columns `lo..hi` whose source column `ox·stride + kx − pad_left`
    /// lies inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.pad_left.saturating_sub(kx).div_ceil(s);
        // largest ox with ox·s + kx < in_w + pad_left
        let hi = (self.in_w + self.pad_left)
            .saturating_sub(kx)
            .div_ceil(s)
            .min(self.out_w);
        (lo.min(hi), hi)
    }

    /// Unfolds one C×H×W image into a `patch_len × out_plane` matrix.
    fn im2col<T: Scalar>(&self, image: &[T], col: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.in_channels {
            let channel = &image[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ky) * self.kernel_w + kx;
                    let dst = &mut col[row * plane..(row + 1) * plane];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..self.out_h {
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        let Some(iy) = Self::source(oy, ky, self.stride, self.pad_top, self.in_h)
                        else {
                            line.fill(T::zero());
                            continue;
                        };
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if lo == hi {
                            continue;
                        }
                        let src = &channel[iy * self.in_w..(iy + 1) * self.in_w];
                        let first = lo * self.stride + kx - self.pad_left;
                        if self.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (v, &x) in line[lo..hi]
                                .iter_mut()
                                .zip(src[first..].iter().step_by(self.stride))
                            {
                                *v = x;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters patch gradients back onto the image.
    fn col2im<T: Scalar>(&self, col: &[T], image: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.in_channels {
            let channel = &mut image[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ky) * self.kernel_w + kx;
                    let src = &col[row * plane..(row + 1) * plane];
                    let (lo, hi) = self.valid_cols(kx);
                    if lo == hi {
                        continue;
                    }
                    let first = lo * self.stride + kx - self.pad_left;
                    for oy in 0..self.out_h {
                        let Some(iy) = Self::source(oy, ky, self.stride, self.pad_top, self.in_h)
                        else {
                            continue;
                        };
                        let dst = &mut channel[iy * self.in_w + first..(iy + 1) * self.in_w];
                        let line = &src[oy * self.out_w + lo..oy * self.out_w + hi];
                        if self.stride == 1 {
                            for (d, &g) in dst[..line.len()].iter_mut().zip(line) {
                                *d += g;
                            }
                        } else {
                            for (d, &g) in dst.iter_mut().step_by(self.stride).zip(line) {
                                *d += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution of an N×C×H×W batch with O×C×kh×kw weights.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    geom.check_input(input)?;
    if weight.shape() != geom.weight_shape() {
        return Err(NnError::Shape(format!(
            "convolution weight shape {:?} != {:?}",
            weight.shape(),
            geom.weight_shape()
        )));
    }
    let (n, plane, patch) = (input.batch(), geom.out_plane(), geom.patch_len());
    let out_item = geom.out_channels * plane;
    let mut out = Tensor::zeros(&[n, geom.out_channels, geom.out_h, geom.out_w]);
    let mut col = vec![T::zero(); patch * plane];
    for b in 0..n {
        geom.im2col(
            &input.data()[b * input.item_len()..(b + 1) * input.item_len()],
            &mut col,
        );
        let dst = &mut out.data_mut()[b * out_item..(b + 1) * out_item];
        if let Some(bias) = bias {
            for (o, chunk) in dst.chunks_exact_mut(plane).enumerate() {
                chunk.fill(bias.data()[o]);
            }
        }
        T::gemm(
            geom.out_channels,
            patch,
            plane,
            T::one(),
            weight.data(),
            (patch as isize, 1),
            &col,
            (plane as isize, 1),
            T::one(),
            dst,
            (plane as isize, 1),
        );
    }
    Ok(out)
}

/// Backward convolution. Accumulates into `weight_grad` / `bias_grad` and
/// returns the gradient with respect to the input.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: &ConvGeometry,
    weight_grad: &mut Tensor<T>,
    bias_grad: Option<&mut Tensor<T>>,
) -> Result<Tensor<T>> {
    geom.check_input(input)?;
    let (n, plane, patch) = (input.batch(), geom.out_plane(), geom.patch_len());
    if grad_out.shape() != [n, geom.out_channels, geom.out_h, geom.out_w] {
        return Err(NnError::Shape(format!(
            "upstream gradient shape {:?} does not match convolution output",
            grad_out.shape()
        )));
    }
    let out_item = geom.out_channels * plane;
    let mut grad_in = Tensor::zeros(input.shape());
    let item = input.item_len();
    let mut col = vec![T::zero(); patch * plane];
    let mut grad_col = vec![T::zero(); patch * plane];
    let mut bias_grad = bias_grad;
    for b in 0..n {
        let g = &grad_out.data()[b * out_item..(b + 1) * out_item];
        if let Some(bg) = bias_grad.as_deref_mut() {
            for (o, chunk) in g.chunks_exact(plane).enumerate() {
                let mut s = T::zero();
                for &v in chunk {
                    s += v;
                }
                bg.data_mut()[o] += s;
            }
        }
        geom.im2col(&input.data()[b * item..(b + 1) * item], &mut col);
        // dW += dOut · colᵀ
        T::gemm(
            geom.out_channels,
            plane,
            patch,
            T::one(),
            g,
            (plane as isize, 1),
            &col,
            (1, plane as isize),
            T::one(),
            weight_grad.data_mut(),
            (patch as isize, 1),
        );
        // dcol = Wᵀ · dOut
        T::gemm(
            patch,
            geom.out_channels,
            plane,
            T::one(),
            weight.data(),
            (1, patch as isize),
            g,
            (plane as isize, 1),
            T::zero(),
            &mut grad_col,
            (plane as isize, 1),
        );
        geom.col2im(&grad_col, &mut grad_in.data_mut()[b * item..(b + 1) * item]);
    }
    Ok(grad_in)
}
