//! Image augmentation and patch extraction.
//!
//! The six augmentation steps are strategies behind [`AugmentStep`], kept in
//! a [`StepRegistry`] keyed by step number and name. [`augment_pipeline`]
//! applies the enabled image-stage steps in the fixed order 6, 3, 2, 4, 1;
//! step 5 (character spacing) acts when a line is rendered.

mod ops;
mod registry;

pub use ops::{
    add_noise, gamma_shift, gaussian_blur, occlude_salt_pepper, perspective_affine, resize_width,
    sample_aspect_ratio, sample_patch, sample_spacing, sample_spacing_raw, shading, shading_with,
    squeeze_aspect, squeeze_to_ratio, warp_affine, AffineParams, Patch, PATCH_SIZE,
};
pub use registry::{augment_pipeline, AugmentStep, Stage, StepRegistry, PIPELINE_ORDER};

use std::collections::BTreeSet;

/// Augmentation knobs. Gray-level quantities are on the 0–255 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub noise_std: f64,
    pub blur_sigma_range: (f64, f64),
    /// Degrees.
    pub affine_max_rotation: f64,
    pub affine_max_shear: f64,
    pub shading_max_delta: f64,
    pub spacing_mean: f64,
    pub spacing_std: f64,
    pub spacing_bounds: (u32, u32),
    pub aspect_ratio_range: (f64, f64),
    pub enabled_steps: BTreeSet<u8>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_std: 3.0,
            blur_sigma_range: (2.5, 3.5),
            affine_max_rotation: 4.0,
            affine_max_shear: 0.1,
            shading_max_delta: 30.0,
            spacing_mean: 10.0,
            spacing_std: 40.0,
            spacing_bounds: (0, 50),
            aspect_ratio_range: (5.0 / 6.0, 7.0 / 6.0),
            enabled_steps: (1..=6).collect(),
        }
    }
}

impl AugmentConfig {
    pub fn with_steps(steps: impl IntoIterator<Item = u8>) -> Self {
        Self {
            enabled_steps: steps.into_iter().collect(),
            ..Self::default()
        }
    }

    /// No augmentation.
    pub fn none() -> Self {
        Self::with_steps([])
    }

    /// Steps 1–4.
    pub fn standard() -> Self {
        Self::with_steps(1..=4)
    }

    /// Steps 1–6.
    pub fn full() -> Self {
        Self::with_steps(1..=6)
    }

    pub fn enabled(&self, step: u8) -> bool {
        self.enabled_steps.contains(&step)
    }

    pub fn validate(&self) -> Result<(), String> {
        let ordered = |(a, b): (f64, f64)| a <= b && a.is_finite() && b.is_finite();
        if !ordered(self.blur_sigma_range) || self.blur_sigma_range.0 < 0.0 {
            return Err("blur_sigma_range must be ordered and non-negative".into());
        }
        if !ordered(self.aspect_ratio_range) || self.aspect_ratio_range.0 <= 0.0 {
            return Err("aspect_ratio_range must be ordered and positive".into());
        }
        if self.spacing_bounds.0 > self.spacing_bounds.1 {
            return Err("spacing_bounds must be ordered".into());
        }
        if self.noise_std < 0.0 || self.spacing_std < 0.0 || self.shading_max_delta < 0.0 {
            return Err("deviations and amplitudes must be non-negative".into());
        }
        if let Some(bad) = self.enabled_steps.iter().find(|s| !(1..=6).contains(*s)) {
            return Err(format!("unknown augmentation step {bad}"));
        }
        Ok(())
    }
}
