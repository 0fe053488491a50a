use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::AugmentConfig;
use crate::image::{GrayImage, LINE_HEIGHT};
use crate::rng::Rng;

/// Side of a square network input patch.
pub const PATCH_SIZE: usize = LINE_HEIGHT;

const BACKGROUND: f64 = 1.0;

/// Per-pixel Gaussian noise with `std` gray levels (0–255 scale).
pub fn add_noise(img: &GrayImage, rng: &mut Rng, std: f64) -> GrayImage {
    if std <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, std / 255.0).expect("positive std");
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| p + normal.sample(rng))
        .collect();
    GrayImage::new(img.height(), img.width(), pixels)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur, radius `ceil(3σ)`, clamp-to-edge borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = (img.height(), img.width());
    let src = img.pixels();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xi = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[xi];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (i, kv) in k.iter().enumerate() {
            let yi = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
            let src_row = &tmp[yi * w..(yi + 1) * w];
            for (o, s) in out[y * w..(y + 1) * w].iter_mut().zip(src_row) {
                *o += kv * s;
            }
        }
    }
    GrayImage::new(h, w, out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub shear: f64,
}

impl AffineParams {
    /// Rotation composed with a horizontal shear, mapping centered source
    /// coordinates to centered output coordinates.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let t = self.rotation_deg * PI / 180.0;
        let (s, c) = t.sin_cos();
        [[c, c * self.shear - s], [s, s * self.shear + c]]
    }
}

fn invert(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ]
}

fn bilinear(img: &GrayImage, y: f64, x: f64) -> f64 {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let fetch = |yy: isize, xx: isize| {
        if yy < 0 || xx < 0 || yy >= h || xx >= w {
            BACKGROUND
        } else {
            img.get(yy as usize, xx as usize)
        }
    };
    let (xi, yi) = (x0 as isize, y0 as isize);
    let top = fetch(yi, xi) * (1.0 - fx) + fetch(yi, xi + 1) * fx;
    let bottom = fetch(yi + 1, xi) * (1.0 - fx) + fetch(yi + 1, xi + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Apply `m` about the image center with bilinear resampling; uncovered
/// pixels take the background value.
pub fn warp_affine(img: &GrayImage, m: [[f64; 2]; 2]) -> GrayImage {
    let inv = invert(m);
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            out.push(bilinear(img, sy, sx));
        }
    }
    GrayImage::new(h, w, out)
}

/// Random rotation and shear within the configured bounds.
pub fn perspective_affine(img: &GrayImage, rng: &mut Rng, cfg: &AugmentConfig) -> GrayImage {
    let draw = |rng: &mut Rng, bound: f64| {
        if bound > 0.0 {
            rng.random_range(-bound..=bound)
        } else {
            0.0
        }
    };
    let params = AffineParams {
        rotation_deg: draw(rng, cfg.affine_max_rotation),
        shear: draw(rng, cfg.affine_max_shear),
    };
    warp_affine(img, params.matrix())
}

/// Subtract a linear illumination ramp of amplitude `delta` (0–255 scale)
/// along direction `angle`.
pub fn shading_with(img: &GrayImage, angle: f64, delta: f64) -> GrayImage {
    if delta <= 0.0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let (dx, dy) = (angle.cos(), angle.sin());
    let proj = |y: usize, x: usize| x as f64 * dx + y as f64 * dy;
    let corners = [
        proj(0, 0),
        proj(0, w - 1),
        proj(h - 1, 0),
        proj(h - 1, w - 1),
    ];
    let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let amp = delta / 255.0;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(img.get(y, x) - amp * (proj(y, x) - lo) / span);
        }
    }
    GrayImage::new(h, w, out)
}

pub fn shading(img: &GrayImage, rng: &mut Rng, max_delta: f64) -> GrayImage {
    if max_delta <= 0.0 {
        return img.clone();
    }
    let angle = rng.random_range(0.0..2.0 * PI);
    let delta = rng.random_range(0.0..=max_delta);
    shading_with(img, angle, delta)
}

/// Gaussian spacing draw clamped to the bounds, before rounding.
pub fn sample_spacing_raw(rng: &mut Rng, cfg: &AugmentConfig) -> f64 {
    let (lo, hi) = cfg.spacing_bounds;
    let x = if cfg.spacing_std > 0.0 {
        Normal::new(cfg.spacing_mean, cfg.spacing_std)
            .expect("valid spacing")
            .sample(rng)
    } else {
        cfg.spacing_mean
    };
    x.clamp(lo as f64, hi as f64)
}

/// Character spacing: [`sample_spacing_raw`] rounded to whole pixels.
pub fn sample_spacing(rng: &mut Rng, cfg: &AugmentConfig) -> u32 {
    sample_spacing_raw(rng, cfg).round_ties_even() as u32
}

pub fn sample_aspect_ratio(rng: &mut Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

/// Horizontal bilinear resize to `new_width` columns.
pub fn resize_width(img: &GrayImage, new_width: usize) -> GrayImage {
    let new_width = new_width.max(1);
    let (h, w) = (img.height(), img.width());
    if new_width == w {
        return img.clone();
    }
    let scale = w as f64 / new_width as f64;
    let taps: Vec<(usize, usize, f64)> = (0..new_width)
        .map(|x| {
            let src = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = src.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            (x0, x1, src - x0 as f64)
        })
        .collect();
    let mut out = Vec::with_capacity(h * new_width);
    for y in 0..h {
        for &(x0, x1, f) in &taps {
            out.push(img.get(y, x0) * (1.0 - f) + img.get(y, x1) * f);
        }
    }
    GrayImage::new(h, new_width, out)
}

/// Width divided by a ratio drawn uniformly from `range`. Returns the
/// ratio with the image.
pub fn squeeze_aspect(img: &GrayImage, rng: &mut Rng, range: (f64, f64)) -> (GrayImage, f64) {
    let r = sample_aspect_ratio(rng, range);
    let w = (img.width() as f64 / r).round_ties_even() as usize;
    (resize_width(img, w), r)
}

/// Rescale the width to `round(ratio · height)`, ties to even.
pub fn squeeze_to_ratio(img: &GrayImage, ratio: f64) -> GrayImage {
    let w = (ratio * img.height() as f64).round_ties_even() as usize;
    resize_width(img, w)
}

/// Gamma curve on paper-space values.
pub fn gamma_shift(img: &GrayImage, gamma: f64) -> GrayImage {
    GrayImage::new(
        img.height(),
        img.width(),
        img.pixels().iter().map(|p| p.powf(gamma)).collect(),
    )
}

/// Between `count.0` and `count.1` rectangles of salt-and-pepper noise,
/// jointly covering at most `max_fraction` of the image.
pub fn occlude_salt_pepper(
    img: &GrayImage,
    rng: &mut Rng,
    count: (usize, usize),
    max_fraction: f64,
    density: f64,
) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    let n = rng.random_range(count.0..=count.1);
    let mut out = img.clone();
    if n == 0 {
        return out;
    }
    let budget = max_fraction * (h * w) as f64 / n as f64;
    for _ in 0..n {
        let area = rng.random_range(0.3 * budget..=budget);
        let aspect: f64 = rng.random_range(0.5..2.0);
        let rh = ((area * aspect).sqrt().floor() as usize).clamp(1, h);
        let rw = ((area / rh as f64).floor() as usize).clamp(1, w);
        let y0 = rng.random_range(0..=h - rh);
        let x0 = rng.random_range(0..=w - rw);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                if rng.random_bool(density) {
                    out.set(y, x, if rng.random_bool(0.5) { 0.0 } else { 1.0 });
                }
            }
        }
    }
    out
}

/// A square network input cut from a line image.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub pixels: GrayImage,
    pub source_id: usize,
    pub offset: (usize, usize),
    pub squeeze_ratio: f64,
}

/// Uniformly placed 105×105 window. Narrow images are padded on the right
/// with background first.
pub fn sample_patch(img: &GrayImage, rng: &mut Rng, source_id: usize, squeeze_ratio: f64) -> Patch {
    assert_eq!(
        img.height(),
        PATCH_SIZE,
        "patches come from height-normalized lines"
    );
    let padded;
    let src = if img.width() < PATCH_SIZE {
        let mut px = vec![BACKGROUND; PATCH_SIZE * PATCH_SIZE];
        for y in 0..PATCH_SIZE {
            for x in 0..img.width() {
                px[y * PATCH_SIZE + x] = img.get(y, x);
            }
        }
        padded = GrayImage::new(PATCH_SIZE, PATCH_SIZE, px);
        &padded
    } else {
        img
    };
    let x0 = rng.random_range(0..=src.width() - PATCH_SIZE);
    Patch {
        pixels: src.crop_columns(x0, PATCH_SIZE),
        source_id,
        offset: (x0, 0),
        squeeze_ratio,
    }
}
