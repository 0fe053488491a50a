//! Dataset directories: `manifest.tsv` plus one PGM per entry.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use fontid_core::augment::AugmentConfig;
use fontid_core::dataset::{
    render_pseudo_real, render_syn, DatasetManifest, Domain, GeneratedDomain, LineSet,
    PseudoRealConfig,
};
use fontid_core::image::{GrayImage, LINE_HEIGHT};
use fontid_core::rng::derive_seed;
use fontid_core::training::{fixed_patches, ScaeValidation};

use crate::CliError;

pub const MANIFEST: &str = "manifest.tsv";
const HOLDOUT_STREAM: u64 = 0x0401_d007;

pub fn write_dir(dir: &Path, generated: &GeneratedDomain) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for (entry, img) in generated.manifest.entries.iter().zip(&generated.images) {
        img.write_pgm(BufWriter::new(File::create(dir.join(&entry.path))?))?;
    }
    generated
        .manifest
        .write(BufWriter::new(File::create(dir.join(MANIFEST))?))?;
    Ok(())
}

pub struct DataDir {
    pub manifest: DatasetManifest,
    pub images: Vec<GrayImage>,
}

impl DataDir {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let file =
            File::open(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let manifest = DatasetManifest::read(BufReader::new(file))?;
        let mut seen = BTreeSet::new();
        let mut images = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(CliError::Data(format!(
                    "duplicate manifest path {}",
                    e.path
                )));
            }
            if e.class.is_some_and(|c| c >= manifest.classes) {
                return Err(CliError::Data(format!(
                    "{}: class outside [0, {})",
                    e.path, manifest.classes
                )));
            }
            let p = dir.join(&e.path);
            let f =
                File::open(&p).map_err(|err| CliError::Data(format!("{}: {err}", p.display())))?;
            let img = GrayImage::read_pgm(BufReader::new(f))
                .map_err(|err| CliError::Data(format!("{}: {err}", p.display())))?;
            if img.height() != LINE_HEIGHT {
                return Err(CliError::Data(format!(
                    "{}: height {} (expected {LINE_HEIGHT})",
                    p.display(),
                    img.height()
                )));
            }
            images.push(img);
        }
        if images.is_empty() {
            return Err(CliError::Data(format!("{}: no entries", dir.display())));
        }
        Ok(Self { manifest, images })
    }

    pub fn line_set(&self) -> LineSet {
        LineSet::new(
            &self.images,
            self.manifest.entries.iter().map(|e| e.class).collect(),
        )
    }

    /// The same lines with labels dropped.
    pub fn unlabeled(&self) -> LineSet {
        LineSet::new(&self.images, vec![None; self.images.len()])
    }

    /// Training-time aspect range when the manifest enables step 6.
    pub fn aspect(&self) -> Option<(f64, f64)> {
        self.manifest
            .steps
            .contains(&6)
            .then(|| AugmentConfig::full().aspect_ratio_range)
    }

    /// Every fifth line goes to validation unless a separate set is given.
    pub fn split(&self) -> (LineSet, LineSet) {
        let pick = |keep: bool| {
            let idx: Vec<usize> = (0..self.images.len())
                .filter(|i| (i % 5 == 4) == keep)
                .collect();
            let imgs: Vec<GrayImage> = idx.iter().map(|&i| self.images[i].clone()).collect();
            LineSet::new(
                &imgs,
                idx.iter()
                    .map(|&i| self.manifest.entries[i].class)
                    .collect(),
            )
        };
        (pick(false), pick(true))
    }

    pub fn is_domain(&self, d: Domain) -> bool {
        self.manifest.domain == d
    }
}

/// Freshly rendered clean-synthetic and pseudo-real lines for logging
/// reconstruction error, disjoint in seed from any generated dataset.
pub fn holdout_sets(
    classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<ScaeValidation, CliError> {
    let mut syn = Vec::new();
    let mut real = Vec::new();
    let pr = PseudoRealConfig::default();
    for c in 0..classes {
        for j in 0..per_class {
            let s = derive_seed(seed ^ HOLDOUT_STREAM, (c * per_class + j) as u64);
            syn.push(
                render_syn(c, s, (6, 10), &AugmentConfig::none())
                    .map_err(|e| CliError::Data(e.to_string()))?,
            );
            real.push(
                render_pseudo_real(c, s, (6, 10), &pr)
                    .map_err(|e| CliError::Data(e.to_string()))?,
            );
        }
    }
    let none = |n| vec![None; n];
    Ok(ScaeValidation {
        syn: fixed_patches(&LineSet::new(&syn, none(syn.len())), None, seed),
        real: fixed_patches(&LineSet::new(&real, none(real.len())), None, seed),
    })
}
