//! Procedural text-line rendering for synthetic font classes.
//!
//! A font class is a small parameter tuple (stroke width, slant, width
//! scale, serifs, corner rounding, baseline wobble) applied to fixed stroke
//! skeletons. Lines are rasterized with a signed-distance coverage model
//! into a band of [`LINE_HEIGHT`] rows.

mod skeleton;

use rand::Rng as _;
use thiserror::Error;

use crate::image::{GrayImage, LINE_HEIGHT};
use crate::rng;
pub use skeleton::{skeleton, Skeleton, ASCENDER, DESCENDER};

/// Pixels per x-height unit.
const UNIT: f64 = 32.0;
/// Baseline row inside the 105-pixel band.
const BASELINE: f64 = 68.0;
/// Largest spacing a render request accepts.
pub const MAX_SPACING: u32 = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlyphError {
    #[error("unsupported character {0:?}")]
    UnsupportedChar(char),
    #[error("empty text")]
    EmptyText,
    #[error("spacing {0} outside [0, {MAX_SPACING}]")]
    Spacing(u32),
    #[error("no corpus word with length in [{0}, {1}]")]
    NoWord(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FontClass {
    pub id: usize,
    /// Pixels, 1–7.
    pub stroke_width: u32,
    /// Horizontal shear per pixel of height, −0.4..0.4.
    pub slant: f64,
    /// Glyph aspect multiplier, 0.6..1.4.
    pub width_scale: f64,
    pub serif: bool,
    /// Pixels, 0–3.
    pub corner_radius: u32,
    /// Pixels, 0–2.
    pub baseline_wobble: u32,
}

/// (stroke bucket, slant sign, serif) for the twelve families. The order
/// spreads the first few classes across all three traits.
const FAMILIES: [(usize, f64, bool); 12] = [
    (1, 1.0, false),
    (1, -1.0, true),
    (0, 1.0, true),
    (2, -1.0, false),
    (0, -1.0, false),
    (2, 1.0, true),
    (1, 1.0, true),
    (1, -1.0, false),
    (2, 1.0, false),
    (0, -1.0, true),
    (0, 1.0, false),
    (2, -1.0, true),
];
const STROKE_BUCKETS: [u32; 3] = [2, 4, 6];

impl FontClass {
    /// Deterministic class parameters. Ids sharing `id % 12` share the
    /// dominant traits and differ in the secondary ones.
    pub fn from_id(id: usize) -> Self {
        let (bucket, sign, serif) = FAMILIES[id % FAMILIES.len()];
        let variant = id / FAMILIES.len();
        let golden = 0.618_033_988_749_894_9;
        let phase = (0.5 + id as f64 * golden).fract();
        FontClass {
            id,
            stroke_width: STROKE_BUCKETS[bucket] + (variant % 2) as u32,
            slant: sign * if (variant / 2) % 2 == 0 { 0.3 } else { 0.15 },
            width_scale: 0.6 + 0.8 * phase,
            serif,
            corner_radius: if serif {
                0
            } else {
                ((variant * 2 + 1) % 4) as u32
            },
            baseline_wobble: (variant % 3) as u32,
        }
    }

    pub fn stroke_bucket(&self) -> usize {
        match self.stroke_width {
            0..=3 => 0,
            4..=5 => 1,
            _ => 2,
        }
    }

    /// The three traits that dominate the visual impression.
    pub fn dominant_traits(&self) -> (usize, bool, bool) {
        (self.stroke_bucket(), self.slant > 0.0, self.serif)
    }

    fn margin(&self) -> usize {
        (self.slant.abs() * (ASCENDER * UNIT + 2.0)).ceil() as usize
            + self.stroke_width as usize
            + 4
    }

    fn advance(&self, skel: &Skeleton) -> usize {
        (skel.width * UNIT * self.width_scale).round_ties_even() as usize
            + self.stroke_width as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderRequest {
    pub text: String,
    pub font: FontClass,
    pub spacing_px: u32,
}

impl RenderRequest {
    pub fn new(text: impl Into<String>, font: FontClass, spacing_px: u32) -> Self {
        Self {
            text: text.into(),
            font,
            spacing_px,
        }
    }
}

/// Line width implied by the layout: margins, per-letter advances and
/// `spacing·(len − 1)`.
pub fn layout_width(req: &RenderRequest) -> Result<usize, GlyphError> {
    validate(req)?;
    let advances: usize = req
        .text
        .chars()
        .map(|c| req.font.advance(&skeleton(c).expect("validated")))
        .sum();
    let gaps = req.text.chars().count() - 1;
    Ok(2 * req.font.margin() + advances + gaps * req.spacing_px as usize)
}

fn validate(req: &RenderRequest) -> Result<(), GlyphError> {
    if req.text.is_empty() {
        return Err(GlyphError::EmptyText);
    }
    if req.spacing_px > MAX_SPACING {
        return Err(GlyphError::Spacing(req.spacing_px));
    }
    if let Some(bad) = req.text.chars().find(|&c| skeleton(c).is_none()) {
        return Err(GlyphError::UnsupportedChar(bad));
    }
    Ok(())
}

/// A stroke segment in pixel coordinates.
struct Segment {
    a: (f64, f64),
    b: (f64, f64),
    half_width: f64,
    radius: f64,
}

impl Segment {
    /// Signed distance to a rounded rectangle around the segment.
    fn sdf(&self, p: (f64, f64)) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len = (dx * dx + dy * dy).sqrt();
        let (ux, uy) = if len > 1e-9 {
            (dx / len, dy / len)
        } else {
            (1.0, 0.0)
        };
        let (px, py) = (p.0 - self.a.0, p.1 - self.a.1);
        let along = (px * ux + py * uy - len / 2.0).abs();
        let across = (-px * uy + py * ux).abs();
        let r = self.radius.min(self.half_width);
        let qx = along - (len / 2.0 + self.half_width - r);
        let qy = across - (self.half_width - r);
        let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
        outside + qx.max(qy).min(0.0) - r
    }

    fn draw(&self, ink: &mut [f64], width: usize) {
        let pad = self.half_width + 1.5;
        let x0 = (self.a.0.min(self.b.0) - pad).floor().max(0.0) as usize;
        let x1 = ((self.a.0.max(self.b.0) + pad).ceil() as usize).min(width - 1);
        let y0 = (self.a.1.min(self.b.1) - pad).floor().max(0.0) as usize;
        let y1 = ((self.a.1.max(self.b.1) + pad).ceil() as usize).min(LINE_HEIGHT - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = self.sdf((x as f64 + 0.5, y as f64 + 0.5));
                let cov = (0.5 - d).clamp(0.0, 1.0);
                let slot = &mut ink[y * width + x];
                if cov > *slot {
                    *slot = cov;
                }
            }
        }
    }
}

/// Render one line of text. The only randomness is the per-letter baseline
/// wobble, drawn from `seed`.
pub fn render_line(req: &RenderRequest, seed: u64) -> Result<GrayImage, GlyphError> {
    let width = layout_width(req)?;
    let font = &req.font;
    let mut rng = rng::seeded(seed);
    let mut ink = vec![0.0; LINE_HEIGHT * width];
    let half = font.stroke_width as f64 / 2.0;
    let mut cursor = font.margin() as f64 + half;
    for ch in req.text.chars() {
        let skel = skeleton(ch).expect("validated");
        let advance = font.advance(&skel) as f64;
        let box_w = advance - font.stroke_width as f64;
        let wobble = if font.baseline_wobble > 0 {
            let w = font.baseline_wobble as f64;
            rng.random_range(-w..=w)
        } else {
            0.0
        };
        let to_px = |(gx, gy): (f64, f64)| {
            let y = BASELINE + wobble - gy * UNIT;
            let x = cursor + gx * box_w + font.slant * (BASELINE - y);
            (x, y)
        };
        let mut segments = Vec::new();
        for stroke in &skel.strokes {
            for pair in stroke.windows(2) {
                segments.push(Segment {
                    a: to_px(pair[0]),
                    b: to_px(pair[1]),
                    half_width: half,
                    radius: font.corner_radius as f64,
                });
            }
            if font.serif {
                for &(gx, gy) in [stroke.first(), stroke.last()].into_iter().flatten() {
                    let on_line = [0.0, 1.0, ASCENDER, DESCENDER]
                        .iter()
                        .any(|l| (gy - l).abs() < 0.05);
                    if on_line {
                        let (cx, cy) = to_px((gx, gy));
                        let reach = 0.18 * UNIT;
                        segments.push(Segment {
                            a: (cx - reach, cy),
                            b: (cx + reach, cy),
                            half_width: (half * 0.6).max(0.5),
                            radius: 0.0,
                        });
                    }
                }
            }
        }
        for s in &segments {
            s.draw(&mut ink, width);
        }
        cursor += advance + req.spacing_px as f64;
    }
    Ok(GrayImage::new(
        LINE_HEIGHT,
        width,
        ink.into_iter().map(|c| 1.0 - c).collect(),
    ))
}

const CORPUS: &str = include_str!("words.txt");

/// The bundled word list (1,000 lowercase words).
pub fn corpus() -> impl Iterator<Item = &'static str> {
    CORPUS.lines().filter(|l| !l.is_empty())
}

/// Uniform draw from corpus words with length in `[min_len, max_len]`.
pub fn sample_corpus_word<R: rand::Rng + ?Sized>(
    rng: &mut R,
    min_len: usize,
    max_len: usize,
) -> Result<&'static str, GlyphError> {
    let pool: Vec<&str> = corpus()
        .filter(|w| (min_len..=max_len).contains(&w.len()))
        .collect();
    if pool.is_empty() {
        return Err(GlyphError::NoWord(min_len, max_len));
    }
    Ok(pool[rng.random_range(0..pool.len())])
}
