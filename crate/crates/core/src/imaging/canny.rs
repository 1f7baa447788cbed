use super::{BinaryImage, GrayImage, ImageError, Result};

/// 3×3 Sobel responses `(gx, gy)` with edge-clamped borders, row-major.
pub fn sobel(img: &GrayImage) -> (Vec<i32>, Vec<i32>) {
    let (w, h) = img.dimensions();
    let mut gx = vec![0i32; w * h];
    let mut gy = vec![0i32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy) as i32;
            let i = y as usize * w + x as usize;
            gx[i] = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            gy[i] = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

/// Neighbor offsets along the gradient for a direction quantized to
/// 0°, 45°, 90° or 135° (image y axis points down).
fn gradient_neighbors(gx: i32, gy: i32) -> (isize, isize) {
    let mut angle = (gy as f64).atan2(gx as f64).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Canny edge detector: Sobel gradients, non-maximum suppression over four
/// direction sectors, then double-threshold hysteresis with 8-connectivity.
///
/// Strong pixels have magnitude `> high`, weak ones `> low`. The one-pixel image
/// border is never marked. Along the gradient a pixel must strictly exceed the
/// neighbor behind it and at least match the one ahead, so a two-pixel-wide
/// plateau of equal magnitude thins to a single line.
pub fn canny(img: &GrayImage, low: u8, high: u8) -> Result<BinaryImage> {
    if low >= high {
        return Err(ImageError::InvalidParameter(format!(
            "canny thresholds need low < high, got {low} and {high}"
        )));
    }
    let (w, h) = img.dimensions();
    let (gx, gy) = sobel(img);
    let mag: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| ((x as f64).powi(2) + (y as f64).powi(2)).sqrt())
        .collect();

    let mut thin = vec![0.0f64; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let m = mag[i];
            if m <= low as f64 {
                continue;
            }
            let (dx, dy) = gradient_neighbors(gx[i], gy[i]);
            let ahead = mag[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            let behind = mag[(y as isize - dy) as usize * w + (x as isize - dx) as usize];
            if m > behind && m >= ahead {
                thin[i] = m;
            }
        }
    }

    let mut edge = vec![false; w * h];
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| thin[i] > high as f64).collect();
    for &i in &stack {
        edge[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && thin[j] > low as f64 {
                    edge[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    Ok(BinaryImage::from_mask(w, h, |i| edge[i]))
}
