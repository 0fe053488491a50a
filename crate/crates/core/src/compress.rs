//! Low-rank factorization of dense layers and parameter accounting.
//!
//! Counts are weights only; biases are tallied separately (see
//! [`SizeReport::bias_total`]).

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::network::{build_full, LayerSpec, Model, NetworkError, NetworkSpec, Weights};
use crate::numerics::{svd, NumericsError, Tensor};

/// Largest `s[k] / s[0]` accepted by [`export_lossless`].
pub const LOSSLESS_RANK_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressError {
    #[error("RANK_EXCEEDED: s[{k}]/s[0] = {ratio:.3e} > {LOSSLESS_RANK_TOL:e}")]
    RankExceeded { k: usize, ratio: f64 },
    #[error("lossless reconstruction error {0:.3e} above tolerance")]
    Reconstruction(f64),
    #[error("k must be at least 1")]
    ZeroRank,
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("layer {0} is not fully connected")]
    NotFc(String),
    #[error("unknown compression mode {0:?}")]
    UnknownMode(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub type Result<T> = std::result::Result<T, CompressError>;

/// `W ≈ Ũ·diag(s̃)·Ṽᵀ` with `Ũ` m×k and `Ṽ` n×k.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedLayer {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub v: Tensor,
}

impl FactorizedLayer {
    pub fn new(u: Tensor, s: Vec<f64>, v: Tensor) -> Result<Self> {
        let (_, ku) = u.dims2()?;
        let (_, kv) = v.dims2()?;
        if ku != s.len() || kv != s.len() {
            return Err(NumericsError::Dimension(format!(
                "factor ranks {ku}/{}/{kv} disagree",
                s.len()
            ))
            .into());
        }
        Ok(Self { u, s, v })
    }

    pub fn m(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.s.len()
    }

    /// `k·(m + n + 1)`.
    pub fn param_count(&self) -> u64 {
        compressed_count(self.m() as u64, self.n() as u64, self.k() as u64)
    }

    pub fn reconstruct(&self) -> Tensor {
        let (m, n, k) = (self.m(), self.n(), self.k());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let urow = &self.u.data()[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                let vrow = &self.v.data()[j * k..(j + 1) * k];
                orow[j] = (0..k).map(|r| urow[r] * self.s[r] * vrow[r]).sum();
            }
        }
        Tensor::new(vec![m, n], out).expect("m×n")
    }
}

fn top_k(w: &Tensor, k: usize) -> Result<(FactorizedLayer, f64)> {
    if k == 0 {
        return Err(CompressError::ZeroRank);
    }
    let d = svd(w)?;
    let (m, r) = d.u.dims2()?;
    let (n, _) = d.v.dims2()?;
    let k_eff = k.min(r);
    let take = |t: &Tensor, rows: usize| {
        let mut out = vec![0.0; rows * k];
        for i in 0..rows {
            out[i * k..i * k + k_eff].copy_from_slice(&t.data()[i * r..i * r + k_eff]);
        }
        Tensor::new(vec![rows, k], out).expect("factor shape")
    };
    let mut s = d.s[..k_eff].to_vec();
    s.resize(k, 0.0);
    Ok((
        FactorizedLayer::new(take(&d.u, m), s, take(&d.v, n))?,
        d.tail_ratio(k),
    ))
}

/// Top-`k` SVD factors regardless of the discarded energy.
pub fn truncate_lossy(w: &Tensor, k: usize) -> Result<FactorizedLayer> {
    Ok(top_k(w, k)?.0)
}

/// Factor a matrix whose numerical rank is at most `k`.
pub fn export_lossless(w: &Tensor, k: usize) -> Result<FactorizedLayer> {
    let (f, ratio) = top_k(w, k)?;
    if ratio > LOSSLESS_RANK_TOL {
        return Err(CompressError::RankExceeded { k, ratio });
    }
    let err = f.reconstruct().max_abs_diff(w);
    if err > 1e-5 * w.max_abs().max(1.0) {
        return Err(CompressError::Reconstruction(err));
    }
    Ok(f)
}

/// Stored count of an m×n layer factorized at rank k.
pub fn compressed_count(m: u64, n: u64, k: u64) -> u64 {
    k * (m + n + 1)
}

/// An exact non-negative fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.as_f64())
    }
}

/// Compressed-to-dense fraction `k(m + n + 1) / (m·n)` of one layer.
pub fn compression_ratio(m: u64, n: u64, k: u64) -> Ratio {
    Ratio {
        num: compressed_count(m, n, k),
        den: m * n,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSize {
    pub name: String,
    pub dense: u64,
    pub biases: u64,
    /// Rank and stored count when factorized.
    pub compressed: Option<(u64, u64)>,
}

impl LayerSize {
    pub fn stored(&self) -> u64 {
        self.compressed.map_or(self.dense, |(_, c)| c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SizeReport {
    pub layers: Vec<LayerSize>,
    /// Weight count of the reference dense model.
    pub total_before: u64,
    pub total_after: u64,
    /// Bias count, not included in the totals.
    pub bias_total: u64,
}

impl SizeReport {
    pub fn ratio(&self) -> Ratio {
        Ratio {
            num: self.total_before,
            den: self.total_after,
        }
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSize> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,dense,biases,k,stored\n");
        for l in &self.layers {
            let k = l.compressed.map_or(String::new(), |(k, _)| k.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                l.name,
                l.dense,
                l.biases,
                k,
                l.stored()
            ));
        }
        out.push_str(&format!(
            "total,{},{},,{}\n",
            self.total_before, self.bias_total, self.total_after
        ));
        out.push_str(&format!("ratio,,,,{}\n", self.ratio()));
        out
    }
}

/// Accounting for `spec` with the named FC layers factorized at the given
/// ranks.
pub fn size_report(spec: &NetworkSpec, compressed: &[(&str, usize)]) -> Result<SizeReport> {
    let names = spec.weighted_names();
    let positions = spec.weighted_positions();
    let shapes = spec.weight_shapes()?;
    let mut ranks = BTreeMap::new();
    for &(name, k) in compressed {
        let idx = spec
            .weighted_index(name)
            .ok_or_else(|| CompressError::UnknownLayer(name.to_string()))?;
        if !matches!(spec.layers[positions[idx]], LayerSpec::Fc { .. }) {
            return Err(CompressError::NotFc(name.to_string()));
        }
        if k == 0 {
            return Err(CompressError::ZeroRank);
        }
        ranks.insert(idx, k as u64);
    }
    let layers: Vec<LayerSize> = names
        .into_iter()
        .zip(&shapes)
        .enumerate()
        .map(|(i, (name, (shape, nb)))| {
            let dense: u64 = shape.iter().map(|&d| d as u64).product();
            let compressed = ranks
                .get(&i)
                .map(|&k| (k, compressed_count(shape[0] as u64, shape[1] as u64, k)));
            LayerSize {
                name,
                dense,
                biases: *nb as u64,
                compressed,
            }
        })
        .collect();
    Ok(SizeReport {
        total_before: layers.iter().map(|l| l.dense).sum(),
        total_after: layers.iter().map(LayerSize::stored).sum(),
        bias_total: layers.iter().map(|l| l.biases).sum(),
        layers,
    })
}

/// Accounting for a model, with its factored layers counted as stored.
pub fn model_size_report(model: &Model) -> Result<SizeReport> {
    let names = model.spec.weighted_names();
    let compressed: Vec<(&str, usize)> = model
        .params
        .iter()
        .zip(&names)
        .filter_map(|(p, n)| match &p.weights {
            Weights::Factored(f) => Some((n.as_str(), f.k())),
            Weights::Dense(_) => None,
        })
        .collect();
    size_report(&model.spec, &compressed)
}

/// Class count of the full-scale benchmark.
pub const FULL_CLASSES: usize = 2383;

/// fc6/fc7 narrowed to 2048 with fc6 factorized at k = 10, compared with
/// the dense full-scale model.
pub fn mini_model_report() -> Result<SizeReport> {
    let reference = size_report(&build_full(FULL_CLASSES, 4096, 2)?, &[])?;
    let mini = build_full(FULL_CLASSES, 2048, 2)?;
    let mut report = size_report(&mini, &[("fc6", 10)])?;
    report.total_before = reference.total_before;
    Ok(report)
}

/// A way to turn a dense FC matrix into factors.
pub trait Compressor: Send + Sync {
    fn name(&self) -> &'static str;
    fn compress(&self, w: &Tensor, k: usize) -> Result<FactorizedLayer>;
}

pub struct Lossy;
impl Compressor for Lossy {
    fn name(&self) -> &'static str {
        "lossy"
    }
    fn compress(&self, w: &Tensor, k: usize) -> Result<FactorizedLayer> {
        truncate_lossy(w, k)
    }
}

pub struct Lossless;
impl Compressor for Lossless {
    fn name(&self) -> &'static str {
        "lossless"
    }
    fn compress(&self, w: &Tensor, k: usize) -> Result<FactorizedLayer> {
        export_lossless(w, k)
    }
}

pub struct CompressorRegistry {
    entries: Vec<Box<dyn Compressor>>,
}

impl Default for CompressorRegistry {
    fn default() -> Self {
        Self {
            entries: vec![Box::new(Lossy), Box::new(Lossless)],
        }
    }
}

impl CompressorRegistry {
    pub fn register(&mut self, c: Box<dyn Compressor>) {
        self.entries.retain(|e| e.name() != c.name());
        self.entries.push(c);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Compressor> {
        self.entries
            .iter()
            .find(|c| c.name() == name)
            .map(|c| c.as_ref())
            .ok_or_else(|| CompressError::UnknownMode(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|c| c.name()).collect()
    }
}

/// Replace layer `name` of `model` by its factorization at rank `k`.
pub fn compress_layer(model: &Model, name: &str, k: usize, how: &dyn Compressor) -> Result<Model> {
    let idx = model
        .spec
        .weighted_index(name)
        .ok_or_else(|| CompressError::UnknownLayer(name.to_string()))?;
    if !matches!(
        model.spec.layers[model.spec.weighted_positions()[idx]],
        LayerSpec::Fc { .. }
    ) {
        return Err(CompressError::NotFc(name.to_string()));
    }
    let mut out = model.clone();
    let dense = out.params[idx].weights.to_dense();
    out.params[idx].weights = Weights::Factored(how.compress(&dense, k)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_cnn, Preset};
    use crate::numerics::rank_project;
    use crate::rng::seeded;
    use rand::Rng as _;

    fn random(m: usize, n: usize, seed: u64) -> Tensor {
        let mut rng = seeded(seed);
        Tensor::new(
            vec![m, n],
            (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn lossy_truncation_matches_discarded_energy() {
        let w = Tensor::diag(&[3.0, 2.0, 1.0]);
        let f = truncate_lossy(&w, 2).unwrap();
        assert!((f.reconstruct().sub(&w).unwrap().frobenius() - 1.0).abs() < 1e-12);
        let full = truncate_lossy(&w, 3).unwrap();
        assert!(full.reconstruct().max_abs_diff(&w) < 1e-8);

        let w = random(12, 8, 1);
        let s = svd(&w).unwrap().s;
        let f = truncate_lossy(&w, 3).unwrap();
        let expected = s[3..].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((f.reconstruct().sub(&w).unwrap().frobenius() - expected).abs() < 1e-8);
        assert_eq!(f.param_count(), 3 * (12 + 8 + 1));
    }

    #[test]
    fn lossless_export() {
        let w = rank_project(&random(20, 15, 2), 4).unwrap();
        let f = export_lossless(&w, 4).unwrap();
        assert!(f.reconstruct().max_abs_diff(&w) <= 1e-5);
        assert!(matches!(
            export_lossless(&random(10, 10, 3), 2),
            Err(CompressError::RankExceeded { k: 2, .. })
        ));
        let z = export_lossless(&Tensor::zeros(&[6, 4]), 2).unwrap();
        assert!(z.reconstruct().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ratio_formula() {
        assert_eq!(compressed_count(36_864, 4_096, 5), 204_805);
        assert_eq!(compressed_count(36_864, 4_096, 100), 4_096_100);
        let r = compression_ratio(36_864, 4_096, 5);
        assert_eq!((r.num, r.den), (204_805, 150_994_944));
        assert!(compression_ratio(10, 10, 10).as_f64() > 1.0);
    }

    #[test]
    fn full_preset_reports() {
        let spec = build_cnn(Preset::Full, FULL_CLASSES, 2).unwrap();
        let plain = size_report(&spec, &[]).unwrap();
        assert_eq!(plain.total_before, 177_546_176);
        assert_eq!(plain.total_after, 177_546_176);
        assert_eq!(plain.ratio().to_string(), "1.00");
        let r = size_report(&spec, &[("fc6", 50)]).unwrap();
        assert_eq!(r.total_after, 28_599_282);
        assert_eq!(r.ratio().to_string(), "6.21");
        assert!(size_report(&spec, &[("conv1", 2)]).is_err());
        assert!(size_report(&spec, &[("fc9", 2)]).is_err());
    }

    #[test]
    fn compress_layer_swaps_in_factors() {
        let m = Model::init(build_cnn(Preset::Desk, 10, 2).unwrap(), &mut seeded(1)).unwrap();
        let reg = CompressorRegistry::default();
        assert_eq!(reg.names(), ["lossy", "lossless"]);
        let c = compress_layer(&m, "fc5", 8, reg.get("lossy").unwrap()).unwrap();
        assert!(matches!(c.params[4].weights, Weights::Factored(_)));
        let report = model_size_report(&c).unwrap();
        assert_eq!(report.layer("fc5").unwrap().stored(), 8 * (256 + 256 + 1));
        assert!(matches!(
            compress_layer(&m, "fc5", 8, reg.get("lossless").unwrap()),
            Err(CompressError::RankExceeded { .. })
        ));
        assert!(reg.get("zip").is_err());
    }
}
