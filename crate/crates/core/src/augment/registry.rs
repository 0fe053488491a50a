use std::collections::BTreeMap;

use rand::Rng as _;

use super::ops::{add_noise, gaussian_blur, perspective_affine, shading, squeeze_aspect};
use super::AugmentConfig;
use crate::image::GrayImage;
use crate::rng::Rng;

/// Order in which image-stage steps run.
pub const PIPELINE_ORDER: [u8; 5] = [6, 3, 2, 4, 1];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Acts while the line is rendered.
    Render,
    /// Acts on a rendered image.
    Image,
}

pub trait AugmentStep: Send + Sync {
    fn number(&self) -> u8;
    fn name(&self) -> &'static str;
    fn stage(&self) -> Stage {
        Stage::Image
    }
    fn apply(&self, img: &GrayImage, cfg: &AugmentConfig, rng: &mut Rng) -> GrayImage;
}

struct Noise;
impl AugmentStep for Noise {
    fn number(&self) -> u8 {
        1
    }
    fn name(&self) -> &'static str {
        "noise"
    }
    fn apply(&self, img: &GrayImage, cfg: &AugmentConfig, rng: &mut Rng) -> GrayImage {
        add_noise(img, rng, cfg.noise_std)
    }
}

struct Blur;
impl AugmentStep for Blur {
    fn number(&self) -> u8 {
        2
    }
    fn name(&self) -> &'static str {
        "blur"
    }
    fn apply(&self, img: &GrayImage, cfg: &AugmentConfig, rng: &mut Rng) -> GrayImage {
        let (lo, hi) = cfg.blur_sigma_range;
        let sigma = if lo < hi {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        gaussian_blur(img, sigma)
    }
}

struct Affine;
impl AugmentStep for Affine {
    fn number(&self) -> u8 {
        3
    }
    fn name(&self) -> &'static str {
        "affine"
    }
    fn apply(&self, img: &GrayImage, cfg: &AugmentConfig, rng: &mut Rng) -> GrayImage {
        perspective_affine(img, rng, cfg)
    }
}

struct Shading;
impl AugmentStep for Shading {
    fn number(&self) -> u8 {
        4
    }
    fn name(&self) -> &'static str {
        "shading"
    }
    fn apply(&self, img: &GrayImage, cfg: &AugmentConfig, rng: &mut Rng) -> GrayImage {
        shading(img, rng, cfg.shading_max_delta)
    }
}

struct Spacing;
impl AugmentStep for Spacing {
    fn number(&self) -> u8 {
        5
    }
    fn name(&self) -> &'static str {
        "spacing"
    }
    fn stage(&self) -> Stage {
        Stage::Render
    }
    fn apply(&self, img: &GrayImage, _: &AugmentConfig, _: &mut Rng) -> GrayImage {
        img.clone()
    }
}

struct Aspect;
impl AugmentStep for Aspect {
    fn number(&self) -> u8 {
        6
    }
    fn name(&self) -> &'static str {
        "aspect"
    }
    fn apply(&self, img: &GrayImage, cfg: &AugmentConfig, rng: &mut Rng) -> GrayImage {
        squeeze_aspect(img, rng, cfg.aspect_ratio_range).0
    }
}

/// Augmentation steps by number, with name lookup.
pub struct StepRegistry {
    steps: BTreeMap<u8, Box<dyn AugmentStep>>,
}

impl StepRegistry {
    pub fn empty() -> Self {
        Self {
            steps: BTreeMap::new(),
        }
    }

    /// Steps 1–6.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Noise));
        r.register(Box::new(Blur));
        r.register(Box::new(Affine));
        r.register(Box::new(Shading));
        r.register(Box::new(Spacing));
        r.register(Box::new(Aspect));
        r
    }

    /// Replaces any step already registered under the same number.
    pub fn register(&mut self, step: Box<dyn AugmentStep>) {
        self.steps.insert(step.number(), step);
    }

    pub fn get(&self, number: u8) -> Option<&dyn AugmentStep> {
        self.steps.get(&number).map(|s| s.as_ref())
    }

    pub fn by_name(&self, name: &str) -> Option<&dyn AugmentStep> {
        self.steps
            .values()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.steps.values().map(|s| s.name()).collect()
    }

    /// Apply enabled image-stage steps in [`PIPELINE_ORDER`].
    pub fn run(&self, img: &GrayImage, cfg: &AugmentConfig, rng: &mut Rng) -> GrayImage {
        let mut out = img.clone();
        for n in PIPELINE_ORDER {
            if !cfg.enabled(n) {
                continue;
            }
            if let Some(step) = self.get(n).filter(|s| s.stage() == Stage::Image) {
                out = step.apply(&out, cfg, rng);
            }
        }
        out
    }
}

/// [`StepRegistry::standard`] applied to one image.
pub fn augment_pipeline(img: &GrayImage, cfg: &AugmentConfig, rng: &mut Rng) -> GrayImage {
    StepRegistry::standard().run(img, cfg, rng)
}
