use serde::{Deserialize, Serialize};

use super::{
    canny, gaussian_blur, largest_foreground_mask, median_filter, resize_bilinear,
    stretch_contrast, threshold_binary, threshold_otsu, to_grayscale, GrayImage, ImageError,
    Result, RgbImage,
};

/// Preprocessing constants and stage toggles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub target_preprocess_size: usize,
    pub model_input_size: usize,
    pub blur_sigma: f64,
    pub blur_kernel: usize,
    pub median_window: usize,
    pub binary_threshold: u8,
    pub use_otsu: bool,
    pub canny_low: u8,
    pub canny_high: u8,
    pub contrast: bool,
    pub blur: bool,
    pub median: bool,
    pub segment: bool,
    pub edges: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target_preprocess_size: 226,
            model_input_size: 100,
            blur_sigma: 1.0,
            blur_kernel: 5,
            median_window: 3,
            binary_threshold: 90,
            use_otsu: false,
            canny_low: 10,
            canny_high: 100,
            contrast: true,
            blur: true,
            median: true,
            segment: true,
            edges: false,
        }
    }
}

/// How the segmentation stage binarizes before masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMethod {
    Fixed(u8),
    Otsu,
}

impl PipelineConfig {
    /// Every stage off: grayscale, resize to the preprocess size, resize to the model size.
    pub fn plain() -> Self {
        Self {
            contrast: false,
            blur: false,
            median: false,
            segment: false,
            edges: false,
            ..Self::default()
        }
    }

    pub fn segment_method(&self) -> SegmentMethod {
        if self.use_otsu {
            SegmentMethod::Otsu
        } else {
            SegmentMethod::Fixed(self.binary_threshold)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ImageError::InvalidParameter(msg));
        if self.canny_low >= self.canny_high {
            return bad(format!(
                "canny_low ({}) must be below canny_high ({})",
                self.canny_low, self.canny_high
            ));
        }
        for (name, k) in [
            ("blur_kernel", self.blur_kernel),
            ("median_window", self.median_window),
        ] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd and at least 1, got {k}"));
            }
        }
        if !(self.blur_sigma > 0.0 && self.blur_sigma.is_finite()) {
            return bad(format!(
                "blur_sigma must be positive, got {}",
                self.blur_sigma
            ));
        }
        for (name, s) in [
            ("target_preprocess_size", self.target_preprocess_size),
            ("model_input_size", self.model_input_size),
        ] {
            if s < 8 {
                return bad(format!("{name} must be at least 8, got {s}"));
            }
        }
        Ok(())
    }
}

/// Runs the pipeline and returns every intermediate product, named by stage.
/// Disabled stages are absent; the last entry is always `final`.
pub fn run_pipeline_stages(
    img: &RgbImage,
    cfg: &PipelineConfig,
) -> Result<Vec<(&'static str, GrayImage)>> {
    cfg.validate()?;
    let mut stages = Vec::new();
    let gray = to_grayscale(img);
    stages.push(("grayscale", gray.clone()));
    let size = cfg.target_preprocess_size;
    let mut cur = resize_bilinear(&gray, size, size)?;
    stages.push(("resize", cur.clone()));
    if cfg.contrast {
        cur = stretch_contrast(&cur);
        stages.push(("contrast", cur.clone()));
    }
    if cfg.blur {
        cur = gaussian_blur(&cur, cfg.blur_sigma, cfg.blur_kernel)?;
        stages.push(("blur", cur.clone()));
    }
    if cfg.median {
        cur = median_filter(&cur, cfg.median_window)?;
        stages.push(("median", cur.clone()));
    }
    if cfg.segment {
        let binary = match cfg.segment_method() {
            SegmentMethod::Fixed(t) => threshold_binary(&cur, t),
            SegmentMethod::Otsu => threshold_otsu(&cur).0,
        };
        let mask = largest_foreground_mask(&binary);
        let masked = cur
            .pixels()
            .iter()
            .zip(mask.pixels())
            .map(|(&p, &m)| if m == 255 { p } else { 0 })
            .collect();
        cur = GrayImage::new(cur.width(), cur.height(), masked)?;
        stages.push(("segment", cur.clone()));
    }
    if cfg.edges {
        cur = canny(&cur, cfg.canny_low, cfg.canny_high)?.into();
        stages.push(("edges", cur.clone()));
    }
    let out = resize_bilinear(&cur, cfg.model_input_size, cfg.model_input_size)?;
    stages.push(("final", out));
    Ok(stages)
}

/// Full preprocessing chain from a color image to the model-sized grayscale input.
pub fn run_pipeline(img: &RgbImage, cfg: &PipelineConfig) -> Result<GrayImage> {
    let mut stages = run_pipeline_stages(img, cfg)?;
    Ok(stages.pop().expect("final stage always present").1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RgbImage {
        let px = (0..64 * 48)
            .map(|i| {
                let (x, y) = (i % 64, i / 64);
                let inside = (x - 30i32).pow(2) + (y - 22i32).pow(2) < 200;
                if inside {
                    [220, 180 - (x as u8), 150]
                } else {
                    [20 + (y as u8), 30, 40]
                }
            })
            .collect();
        RgbImage::new(64, 48, px).unwrap()
    }

    #[test]
    fn defaults_match_constants() {
        let c = PipelineConfig::default();
        assert_eq!(c.target_preprocess_size, 226);
        assert_eq!(c.model_input_size, 100);
        assert_eq!(c.binary_threshold, 90);
        assert_eq!((c.canny_low, c.canny_high), (10, 100));
        c.validate().unwrap();
    }

    #[test]
    fn default_output_is_model_sized() {
        let out = run_pipeline(&sample(), &PipelineConfig::default()).unwrap();
        assert_eq!(out.dimensions(), (100, 100));
    }

    #[test]
    fn pipeline_is_pure() {
        let cfg = PipelineConfig {
            edges: true,
            use_otsu: true,
            ..Default::default()
        };
        assert_eq!(
            run_pipeline(&sample(), &cfg).unwrap(),
            run_pipeline(&sample(), &cfg).unwrap()
        );
    }

    #[test]
    fn plain_pipeline_is_two_resizes() {
        let img = sample();
        let manual = resize_bilinear(
            &resize_bilinear(&to_grayscale(&img), 226, 226).unwrap(),
            100,
            100,
        )
        .unwrap();
        assert_eq!(
            run_pipeline(&img, &PipelineConfig::plain()).unwrap(),
            manual
        );
    }

    #[test]
    fn stage_dump_ends_with_pipeline_output() {
        let cfg = PipelineConfig {
            edges: true,
            ..Default::default()
        };
        let stages = run_pipeline_stages(&sample(), &cfg).unwrap();
        let names: Vec<_> = stages.iter().map(|s| s.0).collect();
        assert_eq!(
            names,
            [
                "grayscale",
                "resize",
                "contrast",
                "blur",
                "median",
                "segment",
                "edges",
                "final"
            ]
        );
        assert_eq!(
            stages.last().unwrap().1,
            run_pipeline(&sample(), &cfg).unwrap()
        );
    }

    #[test]
    fn validation_catches_bad_configs() {
        let bad = [
            PipelineConfig {
                canny_low: 100,
                canny_high: 10,
                ..Default::default()
            },
            PipelineConfig {
                blur_kernel: 4,
                ..Default::default()
            },
            PipelineConfig {
                median_window: 0,
                ..Default::default()
            },
            PipelineConfig {
                model_input_size: 4,
                ..Default::default()
            },
            PipelineConfig {
                blur_sigma: 0.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(run_pipeline(&sample(), &cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn config_json_defaults_and_unknown_keys() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"binary_threshold": 70}"#).unwrap();
        assert_eq!(cfg.binary_threshold, 70);
        assert_eq!(cfg.canny_high, 100);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"thresh": 1}"#).is_err());
    }
}
