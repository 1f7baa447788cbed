//! Character-level sign language recognition.
//!
//! The crate covers the whole path from a photograph to a predicted sign:
//!
//! - [`imaging`]: PNM, PNG and JPEG loading, grayscale conversion, resizing, blur, median
//!   filtering, contrast stretch, fixed and Otsu thresholding, hand mask
//!   extraction and Canny edges, chained by [`imaging::run_pipeline`].
//! - [`nn`]: a small CNN engine (conv, max-pool, dense, ReLU, dropout,
//!   softmax, residual blocks) with hand-written backward passes, Adam and a
//!   finite-difference gradient checker.
//! - [`model`]: the 36-class classifier architecture and its checkpoint format.
//! - [`data`]: dataset scanning, stratified splits, batch assembly and a
//!   synthetic glyph generator that stands in for the photo dataset.
//! - [`train`]: the training loop, evaluation and single-image prediction.

pub mod data;
pub mod imaging;
pub mod model;
pub mod nn;
pub mod train;
