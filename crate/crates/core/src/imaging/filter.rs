use super::{GrayImage, ImageError, Result, RgbImage};

/// Round-half-up of a non-negative value, clamped into the 8-bit range.
pub(crate) fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Rec.601 luma, rounded half up. Integer arithmetic keeps it exact.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let pixels = img
        .pixels()
        .iter()
        .map(|&[r, g, b]| {
            let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
            ((weighted + 500) / 1000).min(255) as u8
        })
        .collect();
    GrayImage::new(img.width(), img.height(), pixels)
        .expect("dimensions carried over from a valid image")
}

/// Bilinear resize with half-pixel-center coordinate mapping.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::InvalidDimensions {
            width: out_w,
            height: out_h,
        });
    }
    let (in_w, in_h) = img.dimensions();
    if (in_w, in_h) == (out_w, out_h) {
        return Ok(img.clone());
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let xs = taps(out_w, in_w);
    let ys = taps(out_h, in_h);
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |x, y| img.get(x, y) as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            pixels.push(round_u8(top * (1.0 - fy) + bottom * fy));
        }
    }
    GrayImage::new(out_w, out_h, pixels)
}

/// Normalized 1-D Gaussian taps; the 2-D kernel is their outer product.
pub fn gaussian_kernel(sigma: f64, ksize: usize) -> Result<Vec<f64>> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(ImageError::InvalidParameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    if ksize.is_multiple_of(2) {
        return Err(ImageError::InvalidParameter(format!(
            "gaussian kernel size must be odd, got {ksize}"
        )));
    }
    let r = (ksize / 2) as f64;
    let mut taps: Vec<f64> = (0..ksize)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// Separable Gaussian blur; intermediate sums stay in f64 and are rounded once.
pub fn gaussian_blur(img: &GrayImage, sigma: f64, ksize: usize) -> Result<GrayImage> {
    let taps = gaussian_kernel(sigma, ksize)?;
    let r = (ksize / 2) as isize;
    let (w, h) = img.dimensions();
    let mut horiz = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            horiz[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, &k)| k * img.get_clamped(x as isize + i as isize - r, y as isize) as f64)
                .sum();
        }
    }
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v: f64 = taps
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    k * horiz[sy * w + x]
                })
                .sum();
            pixels.push(round_u8(v));
        }
    }
    GrayImage::new(w, h, pixels)
}

/// Median over a `window`×`window` neighborhood.
pub fn median_filter(img: &GrayImage, window: usize) -> Result<GrayImage> {
    if window.is_multiple_of(2) {
        return Err(ImageError::InvalidParameter(format!(
            "median window must be odd, got {window}"
        )));
    }
    let r = (window / 2) as isize;
    let (w, h) = img.dimensions();
    let mut buf = Vec::with_capacity(window * window);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            buf.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    buf.push(img.get_clamped(x + dx, y + dy));
                }
            }
            let mid = buf.len() / 2;
            pixels.push(*buf.select_nth_unstable(mid).1);
        }
    }
    GrayImage::new(w, h, pixels)
}

/// Linear min-max stretch onto [0, 255]. Constant images come back unchanged.
pub fn stretch_contrast(img: &GrayImage) -> GrayImage {
    let min = img.pixels().iter().copied().min().unwrap_or(0) as u32;
    let max = img.pixels().iter().copied().max().unwrap_or(0) as u32;
    if min == max {
        return img.clone();
    }
    let span = max - min;
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| ((2 * 255 * (p as u32 - min) + span) / (2 * span)) as u8)
        .collect();
    GrayImage::new(img.width(), img.height(), pixels).expect("same dimensions")
}
