//! Test-time inference over several views, top-k metrics and font
//! similarity from penultimate-layer features.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;
use thiserror::Error;

use crate::augment::{sample_patch, squeeze_to_ratio};
use crate::dataset::{ink_batch, LineSet, TRAIN_SQUEEZE_RATIO};
use crate::image::GrayImage;
use crate::network::{forward, forward_until, Mode, Model, NetworkError};
use crate::rng::{derived, Rng};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("unknown view protocol {0:?}")]
    UnknownProtocol(String),
    #[error("model has no penultimate FC layer")]
    NoFeatureLayer,
    #[error("class {0} not in the similarity index")]
    UnknownClass(usize),
    #[error("{0} predictions for {1} labels")]
    Mismatch(usize, usize),
    #[error("image height {0}, expected 105")]
    Height(usize),
}

pub type Result<T> = std::result::Result<T, EvalError>;

pub const TEST_SQUEEZE_RANGE: (f64, f64) = (1.5, 3.5);
pub const TEST_RATIOS: usize = 3;
pub const PATCHES_PER_RATIO: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_probs: Vec<f64>,
    pub n_views: usize,
}

impl Prediction {
    /// Class ids by decreasing probability; ties go to the lower id.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.class_probs.len()).collect();
        ids.sort_by(|&a, &b| {
            self.class_probs[b]
                .total_cmp(&self.class_probs[a])
                .then(a.cmp(&b))
        });
        ids.truncate(k);
        ids
    }
}

/// How test patches are cut from a line image.
pub trait ViewProtocol: Send + Sync {
    fn name(&self) -> &'static str;
    fn views(&self, img: &GrayImage, rng: &mut Rng) -> Vec<GrayImage>;
}

/// Three random squeeze ratios, five random patches each.
pub struct MultiView;

impl ViewProtocol for MultiView {
    fn name(&self) -> &'static str {
        "multi"
    }

    fn views(&self, img: &GrayImage, rng: &mut Rng) -> Vec<GrayImage> {
        let mut out = Vec::with_capacity(TEST_RATIOS * PATCHES_PER_RATIO);
        for _ in 0..TEST_RATIOS {
            let r = rng.random_range(TEST_SQUEEZE_RANGE.0..=TEST_SQUEEZE_RANGE.1);
            let line = squeeze_to_ratio(img, r);
            for _ in 0..PATCHES_PER_RATIO {
                out.push(sample_patch(&line, rng, 0, r).pixels);
            }
        }
        out
    }
}

/// One random patch at the training squeeze ratio.
pub struct SingleView;

impl ViewProtocol for SingleView {
    fn name(&self) -> &'static str {
        "single"
    }

    fn views(&self, img: &GrayImage, rng: &mut Rng) -> Vec<GrayImage> {
        let line = squeeze_to_ratio(img, TRAIN_SQUEEZE_RATIO);
        vec![sample_patch(&line, rng, 0, TRAIN_SQUEEZE_RATIO).pixels]
    }
}

pub struct ViewRegistry {
    protocols: Vec<Box<dyn ViewProtocol>>,
}

impl Default for ViewRegistry {
    fn default() -> Self {
        Self {
            protocols: vec![Box::new(MultiView), Box::new(SingleView)],
        }
    }
}

impl ViewRegistry {
    pub fn register(&mut self, p: Box<dyn ViewProtocol>) {
        self.protocols.retain(|e| e.name() != p.name());
        self.protocols.push(p);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ViewProtocol> {
        self.protocols
            .iter()
            .find(|p| p.name() == name)
            .map(|p| p.as_ref())
            .ok_or_else(|| EvalError::UnknownProtocol(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.protocols.iter().map(|p| p.name()).collect()
    }
}

fn check_height(img: &GrayImage) -> Result<()> {
    if img.height() != crate::image::LINE_HEIGHT {
        return Err(EvalError::Height(img.height()));
    }
    Ok(())
}

fn mean_rows(t: &crate::numerics::Tensor) -> Vec<f64> {
    let (b, n) = t.batch_rows();
    let mut acc = vec![0.0; n];
    for row in t.data().chunks(n) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc.iter().map(|v| v / b as f64).collect()
}

/// Mean of the softmax outputs over the protocol's views, in eval mode.
pub fn predict_with(
    model: &Model,
    img: &GrayImage,
    protocol: &dyn ViewProtocol,
    rng: &mut Rng,
) -> Result<Prediction> {
    check_height(img)?;
    let views = protocol.views(img, rng);
    let acts = forward(model, &ink_batch(&views), Mode::Eval, rng)?;
    Ok(Prediction {
        class_probs: mean_rows(acts.output()),
        n_views: views.len(),
    })
}

/// Fifteen-view prediction: 3 squeeze ratios from U[1.5, 3.5] × 5 patches.
pub fn predict_multiview(model: &Model, img: &GrayImage, rng: &mut Rng) -> Result<Prediction> {
    predict_with(model, img, &MultiView, rng)
}

/// Predictions for every line of `set`; line `i` uses a seed derived from
/// `(seed, i)`.
pub fn predict_set(
    model: &Model,
    set: &LineSet,
    protocol: &dyn ViewProtocol,
    seed: u64,
) -> Result<Vec<Prediction>> {
    (0..set.len())
        .map(|i| predict_with(model, &set.image(i), protocol, &mut derived(seed, i as u64)))
        .collect()
}

/// Fraction of samples whose label is not among the top `k` classes.
pub fn topk_error(predictions: &[Prediction], labels: &[usize], k: usize) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(EvalError::Mismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let misses = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| !p.top_k(k).contains(l))
        .count();
    Ok(misses as f64 / labels.len() as f64)
}

/// Penultimate FC activations (after ReLU, before dropout) averaged over
/// the multiview patches.
pub fn extract_features(model: &Model, img: &GrayImage, rng: &mut Rng) -> Result<Vec<f64>> {
    check_height(img)?;
    let layer = model
        .spec
        .feature_layer()
        .ok_or(EvalError::NoFeatureLayer)?;
    let views = MultiView.views(img, rng);
    let acts = forward_until(model, &ink_batch(&views), Mode::Eval, rng, layer + 1)?;
    Ok(mean_rows(acts.output()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityIndex {
    /// Class id to representative feature vector.
    pub representative: BTreeMap<usize, Vec<f64>>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl SimilarityIndex {
    /// Per-class mean of the given `(class, features)` samples.
    pub fn from_features(samples: &[(usize, Vec<f64>)]) -> Self {
        let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        for (c, f) in samples {
            let e = sums.entry(*c).or_insert_with(|| (vec![0.0; f.len()], 0));
            for (a, v) in e.0.iter_mut().zip(f) {
                *a += v;
            }
            e.1 += 1;
        }
        let representative = sums
            .into_iter()
            .map(|(c, (s, n))| (c, s.into_iter().map(|v| v / n as f64).collect()))
            .collect();
        Self { representative }
    }

    pub fn classes(&self) -> Vec<usize> {
        self.representative.keys().copied().collect()
    }

    pub fn distance(&self, a: usize, b: usize) -> Result<f64> {
        let ra = self
            .representative
            .get(&a)
            .ok_or(EvalError::UnknownClass(a))?;
        let rb = self
            .representative
            .get(&b)
            .ok_or(EvalError::UnknownClass(b))?;
        Ok(euclidean(ra, rb))
    }
}

/// Representatives from the first `n_per_class` labeled lines of each class.
pub fn build_similarity(
    model: &Model,
    set: &LineSet,
    n_per_class: usize,
    seed: u64,
) -> Result<SimilarityIndex> {
    let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
    let mut samples = Vec::new();
    for i in 0..set.len() {
        let Some(c) = set.label(i) else { continue };
        let n = taken.entry(c).or_default();
        if *n == n_per_class {
            continue;
        }
        *n += 1;
        samples.push((
            c,
            extract_features(model, &set.image(i), &mut derived(seed, i as u64))?,
        ));
    }
    Ok(SimilarityIndex::from_features(&samples))
}

/// Nearest classes to `query` by ascending distance, excluding itself;
/// equal distances keep the lower id first.
pub fn most_similar(
    index: &SimilarityIndex,
    query: usize,
    top_n: usize,
) -> Result<Vec<(usize, f64)>> {
    let q = index
        .representative
        .get(&query)
        .ok_or(EvalError::UnknownClass(query))?;
    let mut out: Vec<(usize, f64)> = index
        .representative
        .iter()
        .filter(|(&c, _)| c != query)
        .map(|(&c, r)| (c, euclidean(q, r)))
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out.truncate(top_n);
    Ok(out)
}

/// CSV rows: image id, true class, top-5 ids, top-5 probabilities.
pub fn eval_report(predictions: &[Prediction], labels: &[Option<usize>]) -> String {
    let mut out = String::from("image,true_class,top5_ids,top5_probs\n");
    for (i, (p, l)) in predictions.iter().zip(labels).enumerate() {
        let top = p.top_k(5);
        let ids: Vec<String> = top.iter().map(|c| c.to_string()).collect();
        let probs: Vec<String> = top
            .iter()
            .map(|&c| format!("{:.6}", p.class_probs[c]))
            .collect();
        let truth = l.map_or("-1".to_string(), |c| c.to_string());
        let _ = writeln!(out, "{i},{truth},{},{}", ids.join(" "), probs.join(" "));
    }
    out
}

/// CSV rows: query class, rank, class, distance.
pub fn similarity_report(index: &SimilarityIndex, top_n: usize) -> Result<String> {
    let mut out = String::from("query,rank,class,distance\n");
    for q in index.classes() {
        for (rank, (c, d)) in most_similar(index, q, top_n)?.into_iter().enumerate() {
            let _ = writeln!(out, "{q},{},{c},{d:.6}", rank + 1);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyphgen::{render_line, FontClass, RenderRequest};
    use crate::network::{build_cnn, LayerSpec, NetworkSpec, Preset};
    use crate::rng::seeded;

    fn line() -> GrayImage {
        render_line(&RenderRequest::new("several", FontClass::from_id(3), 10), 5).unwrap()
    }

    /// All-zero weights give equal logits, hence a uniform softmax.
    fn constant_model(classes: usize) -> Model {
        let spec = NetworkSpec::new(
            vec![
                LayerSpec::Pool {
                    window: 15,
                    stride: 15,
                },
                LayerSpec::Fc { out: 3 },
                LayerSpec::Fc { out: classes },
                LayerSpec::Softmax,
            ],
            1,
            classes,
        )
        .unwrap();
        Model::zeros(spec).unwrap()
    }

    #[test]
    fn top_k_ties_prefer_lower_ids() {
        let p = Prediction {
            class_probs: vec![0.2, 0.3, 0.3, 0.2],
            n_views: 1,
        };
        assert_eq!(p.top_k(4), vec![1, 2, 0, 3]);
    }

    #[test]
    fn fifteen_views_and_determinism() {
        let model = Model::init(build_cnn(Preset::Desk, 4, 2).unwrap(), &mut seeded(1)).unwrap();
        let img = line();
        let a = predict_multiview(&model, &img, &mut seeded(9)).unwrap();
        let b = predict_multiview(&model, &img, &mut seeded(9)).unwrap();
        assert_eq!(a.n_views, 15);
        assert_eq!(a, b);
        assert!((a.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(MultiView.views(&img, &mut seeded(2)).len(), 15);
        assert_eq!(SingleView.views(&img, &mut seeded(2)).len(), 1);
    }

    #[test]
    fn constant_model_gives_constant_vector() {
        let p = predict_multiview(&constant_model(4), &line(), &mut seeded(3)).unwrap();
        for v in p.class_probs {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn topk_basic_cases() {
        let p = |probs: Vec<f64>| Prediction {
            class_probs: probs,
            n_views: 1,
        };
        let preds = vec![p(vec![0.7, 0.2, 0.1]), p(vec![0.1, 0.2, 0.7])];
        assert_eq!(topk_error(&preds, &[0, 2], 1).unwrap(), 0.0);
        assert_eq!(topk_error(&preds, &[1, 1], 1).unwrap(), 1.0);
        assert_eq!(topk_error(&preds, &[1, 1], 2).unwrap(), 0.0);
        assert_eq!(topk_error(&preds, &[2, 0], 3).unwrap(), 0.0);
        assert!(topk_error(&preds, &[0], 1).is_err());
    }

    #[test]
    fn uniform_random_predictor_matches_expectation() {
        let (c, k, n) = (10usize, 3usize, 10_000usize);
        let mut rng = seeded(11);
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            preds.push(Prediction {
                class_probs: (0..c).map(|_| rng.random::<f64>()).collect(),
                n_views: 1,
            });
            labels.push(rng.random_range(0..c));
        }
        let e = topk_error(&preds, &labels, k).unwrap();
        let p = (c - k) as f64 / c as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((e - p).abs() <= 3.0 * sigma, "error {e} vs {p}");
    }

    #[test]
    fn features_are_penultimate_width_and_non_negative() {
        let model = Model::init(build_cnn(Preset::Desk, 4, 2).unwrap(), &mut seeded(1)).unwrap();
        let f = extract_features(&model, &line(), &mut seeded(4)).unwrap();
        assert_eq!(f.len(), 256);
        assert!(f.iter().all(|&v| v >= 0.0));
        assert_eq!(
            f,
            extract_features(&model, &line(), &mut seeded(4)).unwrap()
        );
    }

    #[test]
    fn similarity_index_means_and_ranking() {
        let samples = vec![
            (0, vec![0.0, 0.0]),
            (0, vec![2.0, 0.0]),
            (1, vec![1.0, 3.0]),
            (2, vec![4.0, 0.0]),
        ];
        let idx = SimilarityIndex::from_features(&samples);
        assert_eq!(idx.representative[&0], vec![1.0, 0.0]);
        assert_eq!(idx.classes(), vec![0, 1, 2]);
        assert_eq!(idx.distance(1, 1).unwrap(), 0.0);
        assert_eq!(idx.distance(0, 2).unwrap(), idx.distance(2, 0).unwrap());
        let near = most_similar(&idx, 0, 5).unwrap();
        assert_eq!(near, vec![(1, 3.0), (2, 3.0)]);
        assert!(most_similar(&idx, 7, 1).is_err());
        let csv = similarity_report(&idx, 1).unwrap();
        assert!(csv.starts_with("query,rank,class,distance\n0,1,1,3.000000\n"));
    }

    #[test]
    fn identical_samples_give_that_sample() {
        let f = vec![0.5, 1.5, 2.5];
        let idx = SimilarityIndex::from_features(&[(4, f.clone()), (4, f.clone()), (4, f.clone())]);
        assert_eq!(idx.representative[&4], f);
    }

    #[test]
    fn registry_lookup() {
        let reg = ViewRegistry::default();
        assert_eq!(reg.names(), ["multi", "single"]);
        assert!(reg.get("multi").is_ok());
        assert!(matches!(
            reg.get("grid"),
            Err(EvalError::UnknownProtocol(_))
        ));
    }
}
