//! Pixel containers, image I/O and the preprocessing/segmentation operators.
//!
//! Every operator here is a pure function of its inputs. Windowed operators
//! (blur, median, Sobel) replicate edge pixels at the borders.

mod canny;
mod filter;
mod pipeline;
mod pnm;
mod segment;

pub use canny::{canny, sobel};
pub use filter::{
    gaussian_blur, gaussian_kernel, median_filter, resize_bilinear, stretch_contrast, to_grayscale,
};
pub use pipeline::{run_pipeline, run_pipeline_stages, PipelineConfig, SegmentMethod};
pub use pnm::{load_image, save_pgm, save_ppm};
pub use segment::{largest_foreground_mask, threshold_binary, threshold_otsu};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image file not found: {0}")]
    NotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed image header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("truncated pixel data in {path}: expected {expected} bytes, found {found}")]
    TruncatedData {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("pixel buffer holds {found} values, {width}x{height} image needs {expected}")]
    BufferSize {
        width: usize,
        height: usize,
        expected: usize,
        found: usize,
    },
    #[error("binary image contains value {0}, only 0 and 255 are allowed")]
    NotBinary(u8),
}

pub type Result<T> = std::result::Result<T, ImageError>;

fn check_buffer(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(ImageError::InvalidDimensions { width, height });
    }
    if width * height != len {
        return Err(ImageError::BufferSize {
            width,
            height,
            expected: width * height,
            found: len,
        });
    }
    Ok(())
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        check_buffer(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }
}

impl From<&GrayImage> for RgbImage {
    fn from(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            pixels: img.pixels.iter().map(|&v| [v, v, v]).collect(),
        }
    }
}

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_buffer(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Pixel lookup with edge-clamp replication for out-of-range coordinates.
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[y * self.width + x]
    }
}

impl From<BinaryImage> for GrayImage {
    fn from(img: BinaryImage) -> Self {
        img.0
    }
}

/// Image whose pixels are all 0 (background) or 255 (foreground).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage(GrayImage);

impl BinaryImage {
    pub const FOREGROUND: u8 = 255;

    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = pixels.iter().find(|&&p| p != 0 && p != 255) {
            return Err(ImageError::NotBinary(bad));
        }
        GrayImage::new(width, height, pixels).map(Self)
    }

    /// Builds a binary image from a foreground predicate over pixel indices.
    pub(crate) fn from_mask(width: usize, height: usize, fg: impl Fn(usize) -> bool) -> Self {
        let pixels = (0..width * height)
            .map(|i| if fg(i) { 255 } else { 0 })
            .collect();
        Self(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.0.pixels
    }

    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y) == 255
    }

    pub fn foreground_count(&self) -> usize {
        self.0.pixels.iter().filter(|&&p| p == 255).count()
    }

    pub fn as_gray(&self) -> &GrayImage {
        &self.0
    }
}
