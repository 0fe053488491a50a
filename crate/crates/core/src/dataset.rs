//! Synthetic and pseudo-real line datasets, the manifest format and patch
//! sampling for training.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::augment::{
    gamma_shift, gaussian_blur, occlude_salt_pepper, sample_patch, sample_spacing, squeeze_aspect,
    squeeze_to_ratio, AugmentConfig, Patch, StepRegistry,
};
use crate::glyphgen::{render_line, sample_corpus_word, FontClass, GlyphError, RenderRequest};
use crate::image::{GrayImage, LINE_HEIGHT};
use crate::numerics::Tensor;
use crate::rng::{derive_seed, seeded, Rng};

pub const MANIFEST_VERSION: u32 = 1;
/// Width-to-height ratio lines are squeezed to before training patches are cut.
pub const TRAIN_SQUEEZE_RATIO: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Syn,
    PseudoReal,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Syn => "syn",
            Domain::PseudoReal => "pseudo-real",
        })
    }
}

impl FromStr for Domain {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "syn" => Ok(Domain::Syn),
            "pseudo-real" => Ok(Domain::PseudoReal),
            other => Err(format!(
                "unknown domain {other:?} (expected syn or pseudo-real)"
            )),
        }
    }
}

/// Held-out perturbations that define the pseudo-real domain.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoRealConfig {
    pub spacing_mean: f64,
    pub spacing_std: f64,
    pub blur_sigma_range: (f64, f64),
    pub gamma_range: (f64, f64),
    pub occlusion_count: (usize, usize),
    pub occlusion_max_fraction: f64,
    pub occlusion_density: f64,
}

impl Default for PseudoRealConfig {
    fn default() -> Self {
        Self {
            spacing_mean: 25.0,
            spacing_std: 40.0,
            blur_sigma_range: (3.5, 4.5),
            gamma_range: (0.6, 1.5),
            occlusion_count: (1, 3),
            occlusion_max_fraction: 0.1,
            occlusion_density: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainConfig {
    pub n_classes: usize,
    pub word_len: (usize, usize),
    pub augment: AugmentConfig,
    pub pseudo_real: PseudoRealConfig,
    /// Strip class ids from pseudo-real manifests.
    pub unlabeled: bool,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            word_len: (6, 10),
            augment: AugmentConfig::full(),
            pseudo_real: PseudoRealConfig::default(),
            unlabeled: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Glyph(#[from] GlyphError),
    #[error("n_per_class must be at least 1")]
    Empty,
    #[error("manifest line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("manifest io: {0}")]
    Io(#[from] io::Error),
}

fn draw_word(rng: &mut Rng, word_len: (usize, usize)) -> Result<&'static str, GlyphError> {
    sample_corpus_word(rng, word_len.0, word_len.1)
}

/// Synthetic line for `(class, seed)` with the given augmentation. Step 6
/// is left to patch sampling, after squeezing.
pub fn render_syn(
    class: usize,
    seed: u64,
    word_len: (usize, usize),
    aug: &AugmentConfig,
) -> Result<GrayImage, GlyphError> {
    let mut rng = seeded(seed);
    let word = draw_word(&mut rng, word_len)?;
    let spacing = if aug.enabled(5) {
        sample_spacing(&mut rng, aug)
    } else {
        aug.spacing_mean.round() as u32
    };
    let line = render_line(
        &RenderRequest::new(word, FontClass::from_id(class), spacing),
        rng.random(),
    )?;
    let mut image_steps = aug.clone();
    image_steps.enabled_steps.remove(&6);
    Ok(StepRegistry::standard().run(&line, &image_steps, &mut rng))
}

/// Pseudo-real line for `(class, seed)`: the same word as [`render_syn`]
/// draws, rendered with wider spacing, then gamma, heavy blur and
/// salt-and-pepper occlusion.
pub fn render_pseudo_real(
    class: usize,
    seed: u64,
    word_len: (usize, usize),
    cfg: &PseudoRealConfig,
) -> Result<GrayImage, GlyphError> {
    let mut rng = seeded(seed);
    let word = draw_word(&mut rng, word_len)?;
    let spacing = Normal::new(cfg.spacing_mean, cfg.spacing_std)
        .expect("valid spacing")
        .sample(&mut rng)
        .clamp(0.0, crate::glyphgen::MAX_SPACING as f64)
        .round_ties_even() as u32;
    let line = render_line(
        &RenderRequest::new(word, FontClass::from_id(class), spacing),
        rng.random(),
    )?;
    let gamma = rng.random_range(cfg.gamma_range.0..=cfg.gamma_range.1);
    let sigma = rng.random_range(cfg.blur_sigma_range.0..=cfg.blur_sigma_range.1);
    let img = gaussian_blur(&gamma_shift(&line, gamma), sigma);
    Ok(occlude_salt_pepper(
        &img,
        &mut rng,
        cfg.occlusion_count,
        cfg.occlusion_max_fraction,
        cfg.occlusion_density,
    ))
}

pub fn render_entry(
    domain: Domain,
    class: usize,
    seed: u64,
    cfg: &DomainConfig,
) -> Result<GrayImage, GlyphError> {
    match domain {
        Domain::Syn => render_syn(class, seed, cfg.word_len, &cfg.augment),
        Domain::PseudoReal => render_pseudo_real(class, seed, cfg.word_len, &cfg.pseudo_real),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub class: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub version: u32,
    pub height: usize,
    pub domain: Domain,
    pub classes: usize,
    /// Augmentation steps used for synthetic renders.
    pub steps: BTreeSet<u8>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(domain: Domain, classes: usize, steps: BTreeSet<u8>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            height: LINE_HEIGHT,
            domain,
            classes,
            steps,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        let steps: Vec<String> = self.steps.iter().map(u8::to_string).collect();
        writeln!(out, "# version {}", self.version)?;
        writeln!(out, "# height {}", self.height)?;
        writeln!(out, "# domain {}", self.domain)?;
        writeln!(out, "# classes {}", self.classes)?;
        writeln!(
            out,
            "# steps {}",
            if steps.is_empty() {
                "-".into()
            } else {
                steps.join(",")
            }
        )?;
        for e in &self.entries {
            let class = e.class.map_or(-1, |c| c as i64);
            writeln!(out, "{}\t{}\t{}", e.path, class, e.seed)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, DatasetError> {
        let mut version = None;
        let mut height = None;
        let mut domain = None;
        let mut classes = None;
        let mut steps = BTreeSet::new();
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            let err = |msg: String| DatasetError::Parse { line: n, msg };
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if !entries.is_empty() {
                    return Err(err("header line after entries".into()));
                }
                let mut parts = rest.trim().splitn(2, ' ');
                let key = parts.next().unwrap_or("");
                let value = parts.next().unwrap_or("").trim();
                let bad = |what: &str| err(format!("bad {what} {value:?}"));
                match key {
                    "version" => {
                        let v: u32 = value.parse().map_err(|_| bad("version"))?;
                        if v != MANIFEST_VERSION {
                            return Err(err(format!("unsupported version {v}")));
                        }
                        version = Some(v);
                    }
                    "height" => height = Some(value.parse().map_err(|_| bad("height"))?),
                    "domain" => domain = Some(value.parse::<Domain>().map_err(err)?),
                    "classes" => classes = Some(value.parse().map_err(|_| bad("classes"))?),
                    "steps" => {
                        if value != "-" {
                            for s in value.split(',') {
                                let s: u8 = s.trim().parse().map_err(|_| bad("steps"))?;
                                if !(1..=6).contains(&s) {
                                    return Err(bad("steps"));
                                }
                                steps.insert(s);
                            }
                        }
                    }
                    _ => return Err(err(format!("unknown header key {key:?}"))),
                }
                continue;
            }
            let n_classes = classes.ok_or_else(|| err("entry before classes header".into()))?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let path = fields[0].to_string();
            if path.is_empty() {
                return Err(err("empty path".into()));
            }
            let class: i64 = fields[1]
                .parse()
                .map_err(|_| err(format!("bad class {:?}", fields[1])))?;
            if class < -1 || class >= n_classes as i64 {
                return Err(err(format!("class {class} outside [-1, {n_classes})")));
            }
            let seed: u64 = fields[2]
                .parse()
                .map_err(|_| err(format!("bad seed {:?}", fields[2])))?;
            if !seen.insert(path.clone()) {
                return Err(err(format!("duplicate path {path}")));
            }
            entries.push(ManifestEntry {
                path,
                class: (class >= 0).then_some(class as usize),
                seed,
            });
        }
        let missing = |what: &str| DatasetError::Parse {
            line: 0,
            msg: format!("missing {what} header"),
        };
        Ok(Self {
            version: version.ok_or_else(|| missing("version"))?,
            height: height.ok_or_else(|| missing("height"))?,
            domain: domain.ok_or_else(|| missing("domain"))?,
            classes: classes.ok_or_else(|| missing("classes"))?,
            steps,
            entries,
        })
    }
}

/// A manifest with its rendered images, in entry order.
#[derive(Clone, Debug)]
pub struct GeneratedDomain {
    pub manifest: DatasetManifest,
    pub images: Vec<GrayImage>,
}

impl GeneratedDomain {
    /// Labeled images as a [`LineSet`]. Unlabeled entries keep `None`.
    pub fn line_set(&self) -> LineSet {
        LineSet::new(
            &self.images,
            self.manifest.entries.iter().map(|e| e.class).collect(),
        )
    }
}

/// Render `n_per_class` lines for each class. Entry seeds derive from
/// `seed` and the entry index, so a class/index pair renders the same word
/// in both domains.
pub fn make_domain(
    cfg: &DomainConfig,
    domain: Domain,
    n_per_class: usize,
    seed: u64,
) -> Result<GeneratedDomain, DatasetError> {
    if n_per_class == 0 {
        return Err(DatasetError::Empty);
    }
    let mut manifest =
        DatasetManifest::new(domain, cfg.n_classes, cfg.augment.enabled_steps.clone());
    let mut images = Vec::with_capacity(cfg.n_classes * n_per_class);
    for class in 0..cfg.n_classes {
        for j in 0..n_per_class {
            let index = class * n_per_class + j;
            let entry_seed = derive_seed(seed, index as u64);
            images.push(render_entry(domain, class, entry_seed, cfg)?);
            let label = if domain == Domain::PseudoReal && cfg.unlabeled {
                None
            } else {
                Some(class)
            };
            manifest.entries.push(ManifestEntry {
                path: format!("img_{index:06}.pgm"),
                class: label,
                seed: entry_seed,
            });
        }
    }
    Ok(GeneratedDomain { manifest, images })
}

/// A line stored at 8 bits per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompactLine {
    height: usize,
    width: usize,
    bytes: Vec<u8>,
}

impl CompactLine {
    pub fn from_image(img: &GrayImage) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            bytes: img.to_bytes(),
        }
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::new(
            self.height,
            self.width,
            self.bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }
}

/// Lines with optional labels, sampled into training patches.
#[derive(Clone, Debug, Default)]
pub struct LineSet {
    lines: Vec<CompactLine>,
    labels: Vec<Option<usize>>,
}

impl LineSet {
    pub fn new(images: &[GrayImage], labels: Vec<Option<usize>>) -> Self {
        assert_eq!(images.len(), labels.len());
        Self {
            lines: images.iter().map(CompactLine::from_image).collect(),
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> GrayImage {
        self.lines[i].to_image()
    }

    pub fn extend(&mut self, other: &LineSet) {
        self.lines.extend(other.lines.iter().cloned());
        self.labels.extend_from_slice(&other.labels);
    }

    /// Squeeze line `i` to the training ratio, apply the random aspect
    /// change when given, and cut a random patch.
    pub fn training_patch(&self, i: usize, aspect: Option<(f64, f64)>, rng: &mut Rng) -> Patch {
        let squeezed = squeeze_to_ratio(&self.image(i), TRAIN_SQUEEZE_RATIO);
        let (line, ratio) = match aspect {
            Some(range) => {
                let (img, r) = squeeze_aspect(&squeezed, rng, range);
                (img, TRAIN_SQUEEZE_RATIO / r)
            }
            None => (squeezed, TRAIN_SQUEEZE_RATIO),
        };
        sample_patch(&line, rng, i, ratio)
    }
}

/// Stack patches into a `[B, 1, 105, 105]` tensor of ink values (1 − pixel).
pub fn ink_batch<'a>(patches: impl IntoIterator<Item = &'a GrayImage>) -> Tensor {
    let mut data = Vec::new();
    let mut b = 0;
    let mut hw = (0, 0);
    for p in patches {
        hw = (p.height(), p.width());
        data.extend(p.pixels().iter().map(|v| 1.0 - v));
        b += 1;
    }
    Tensor::new(vec![b, 1, hw.0, hw.1], data).expect("consistent patch sizes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(classes: usize) -> DomainConfig {
        DomainConfig {
            n_classes: classes,
            ..DomainConfig::default()
        }
    }

    #[test]
    fn entry_counts_and_labels() {
        let d = make_domain(&small_cfg(3), Domain::Syn, 2, 7).unwrap();
        assert_eq!(d.manifest.len(), 6);
        assert_eq!(d.images.len(), 6);
        assert!(d
            .images
            .iter()
            .all(|i| i.height() == LINE_HEIGHT && i.in_range()));
        let cfg = DomainConfig {
            unlabeled: true,
            ..small_cfg(3)
        };
        let r = make_domain(&cfg, Domain::PseudoReal, 2, 7).unwrap();
        assert!(r.manifest.entries.iter().all(|e| e.class.is_none()));
        assert!(matches!(
            make_domain(&cfg, Domain::Syn, 0, 1),
            Err(DatasetError::Empty)
        ));
    }

    #[test]
    fn domains_differ_for_identical_text() {
        let cfg = small_cfg(10);
        let differing = (0..100u64)
            .filter(|&s| {
                let a =
                    render_syn(s as usize % 10, s, cfg.word_len, &AugmentConfig::none()).unwrap();
                let b =
                    render_pseudo_real(s as usize % 10, s, cfg.word_len, &cfg.pseudo_real).unwrap();
                a != b
            })
            .count();
        assert!(differing > 99);
    }

    #[test]
    fn rendering_is_reproducible() {
        let cfg = small_cfg(4);
        let a = make_domain(&cfg, Domain::Syn, 2, 3).unwrap();
        let b = make_domain(&cfg, Domain::Syn, 2, 3).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn manifest_roundtrip() {
        let d = make_domain(&small_cfg(2), Domain::Syn, 2, 1).unwrap();
        let mut buf = Vec::new();
        d.manifest.write(&mut buf).unwrap();
        let back = DatasetManifest::read(&buf[..]).unwrap();
        assert_eq!(back, d.manifest);
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let head = "# version 1\n# height 105\n# domain syn\n# classes 3\n# steps 1,2\n";
        let cases = [
            (format!("{head}a.pgm\t1\n"), 6),
            (format!("{head}a.pgm\t1\t5\nb.pgm\t3\t5\n"), 7),
            (format!("{head}a.pgm\t1\t5\na.pgm\t2\t5\n"), 7),
            (format!("{head}a.pgm\tx\t5\n"), 6),
            ("# version 1\n# domain photo\n".to_string(), 2),
            (format!("{head}a.pgm\t1\t5\n# classes 4\n"), 7),
        ];
        for (text, line) in cases {
            match DatasetManifest::read(text.as_bytes()) {
                Err(DatasetError::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("expected parse error, got {other:?}"),
            }
        }
        let ok = DatasetManifest::read(format!("{head}a.pgm\t-1\t5\n").as_bytes()).unwrap();
        assert_eq!(ok.entries[0].class, None);
    }

    #[test]
    fn training_patches_have_patch_size() {
        let d = make_domain(&small_cfg(2), Domain::Syn, 2, 1).unwrap();
        let set = d.line_set();
        let mut rng = seeded(0);
        for i in 0..set.len() {
            let p = set.training_patch(i, Some((5.0 / 6.0, 7.0 / 6.0)), &mut rng);
            assert_eq!((p.pixels.height(), p.pixels.width()), (105, 105));
            assert!(p.squeeze_ratio > 2.0 && p.squeeze_ratio < 3.1);
        }
        let batch = ink_batch([&set.image(0).crop_columns(0, 105)]);
        assert_eq!(batch.shape(), &[1, 1, 105, 105]);
    }
}
