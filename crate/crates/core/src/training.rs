//! SGD with momentum, auto-encoder pretraining, supervised training of
//! C_s, and rank-constrained fine-tuning.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::dataset::{ink_batch, render_syn, LineSet, PseudoRealConfig};
use crate::glyphgen::GlyphError;
use crate::network::{
    backward, build_scae, forward, split, Gradients, Mode, Model, ModelFragment, NetworkError,
    NetworkSpec, Weights,
};
use crate::numerics::{mse_loss, softmax_xent, svd_warm, NumericsError, Tensor};
use crate::rng::{derived, Rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Glyph(#[from] GlyphError),
    #[error("variant {0} needs pseudo-real data")]
    MissingReal(String),
    #[error("unknown SCAE variant {0:?}")]
    UnknownVariant(String),
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("no training data")]
    NoData,
    #[error("training diverged (non-finite loss at epoch {0})")]
    Diverged(usize),
    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lr_drop_factor: f64,
    /// Validation epochs without improvement before the learning rate drops.
    pub patience: usize,
    pub max_lr_drops: usize,
    pub max_epochs: usize,
    /// Batches per epoch; zero means one pass over the lines.
    pub steps_per_epoch: usize,
    pub seed: u64,
    /// Layer name and rank for rank-constrained training.
    pub rank_constraint: Option<(String, usize)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 32,
            lr_drop_factor: 10.0,
            patience: 3,
            max_lr_drops: 3,
            max_epochs: 30,
            steps_per_epoch: 0,
            seed: 0,
            rank_constraint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr0 > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("lr0 must be positive, momentum in [0, 1), weight_decay non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if !(self.lr_drop_factor > 1.0) {
            return bad("lr_drop_factor must exceed 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Scae,
    Supervised,
    RankFt,
}

impl Phase {
    pub fn tag(&self) -> &'static str {
        match self {
            Phase::Scae => "SCAE",
            Phase::Supervised => "SUPERVISED",
            Phase::RankFt => "RANK_FT",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
    pub seconds: f64,
    /// Extra named metrics, written after the fixed columns.
    pub extra: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,phase,lr,train_loss,val_metric,seconds");
        let extra_names: Vec<&str> = self
            .records
            .first()
            .map(|r| r.extra.iter().map(|(n, _)| n.as_str()).collect())
            .unwrap_or_default();
        for n in &extra_names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{},{},{:.6},{:.6},{:.3}",
                r.epoch,
                r.phase.tag(),
                r.lr,
                r.train_loss,
                r.val_metric,
                r.seconds
            );
            for (_, v) in &r.extra {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn lrs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lr).collect()
    }
}

/// Momentum buffers per weighted layer.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: BTreeMap<usize, (Vec<f64>, Vec<f64>)>,
}

/// `v ← μv − lr(g + wd·w); w ← w + v` on weights, the same without decay on
/// biases. Frozen layers and layers without gradients are untouched.
pub fn sgd_step(
    model: &mut Model,
    grads: &Gradients,
    state: &mut SgdState,
    cfg: &TrainConfig,
    lr: f64,
) {
    for (i, g) in grads.layers.iter().enumerate() {
        let Some((gw, gb)) = g else { continue };
        let p = &mut model.params[i];
        if p.frozen {
            continue;
        }
        let Weights::Dense(w) = &mut p.weights else {
            continue;
        };
        let (vw, vb) = state
            .velocity
            .entry(i)
            .or_insert_with(|| (vec![0.0; w.len()], vec![0.0; p.bias.len()]));
        for ((wv, v), g) in w.data_mut().iter_mut().zip(vw.iter_mut()).zip(gw.data()) {
            *v = cfg.momentum * *v - lr * (g + cfg.weight_decay * *wv);
            *wv += *v;
        }
        for ((bv, v), g) in p.bias.iter_mut().zip(vb.iter_mut()).zip(gb) {
            *v = cfg.momentum * *v - lr * g;
            *bv += *v;
        }
    }
}

/// A pool of line sets; consecutive batches take turns across the sets.
pub struct PatchPool {
    pub sets: Vec<(LineSet, Option<(f64, f64)>)>,
}

impl PatchPool {
    pub fn lines(&self) -> usize {
        self.sets.iter().map(|(s, _)| s.len()).sum()
    }
}

/// Inputs shared by all auto-encoder data recipes.
pub struct ScaeSources {
    /// (class, render seed) of synthetic lines.
    pub syn: Vec<(usize, u64)>,
    pub word_len: (usize, usize),
    pub real: Option<LineSet>,
}

/// Training data for one auto-encoder variant.
pub trait ScaeRecipe: Send + Sync {
    fn name(&self) -> &'static str;
    fn pool(&self, src: &ScaeSources) -> Result<PatchPool>;
}

fn syn_set(src: &ScaeSources, aug: &AugmentConfig) -> Result<(LineSet, Option<(f64, f64)>)> {
    let images = src
        .syn
        .iter()
        .map(|&(c, s)| render_syn(c, s, src.word_len, aug))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let labels = src.syn.iter().map(|&(c, _)| Some(c)).collect();
    let aspect = aug.enabled(6).then_some(aug.aspect_ratio_range);
    Ok((LineSet::new(&images, labels), aspect))
}

fn real_set(name: &str, src: &ScaeSources) -> Result<(LineSet, Option<(f64, f64)>)> {
    match &src.real {
        Some(r) if !r.is_empty() => Ok((r.clone(), None)),
        _ => Err(TrainError::MissingReal(name.to_string())),
    }
}

struct SynRecipe {
    name: &'static str,
    aug: AugmentConfig,
}

impl ScaeRecipe for SynRecipe {
    fn name(&self) -> &'static str {
        self.name
    }
    fn pool(&self, src: &ScaeSources) -> Result<PatchPool> {
        Ok(PatchPool {
            sets: vec![syn_set(src, &self.aug)?],
        })
    }
}

struct RealRecipe;
impl ScaeRecipe for RealRecipe {
    fn name(&self) -> &'static str {
        "R"
    }
    fn pool(&self, src: &ScaeSources) -> Result<PatchPool> {
        Ok(PatchPool {
            sets: vec![real_set("R", src)?],
        })
    }
}

struct MixedRecipe;
impl ScaeRecipe for MixedRecipe {
    fn name(&self) -> &'static str {
        "FR"
    }
    fn pool(&self, src: &ScaeSources) -> Result<PatchPool> {
        let real = real_set("FR", src)?;
        Ok(PatchPool {
            sets: vec![syn_set(src, &AugmentConfig::full())?, real],
        })
    }
}

/// Auto-encoder data recipes by variant name.
pub struct RecipeRegistry {
    recipes: Vec<Box<dyn ScaeRecipe>>,
}

impl Default for RecipeRegistry {
    fn default() -> Self {
        Self {
            recipes: vec![
                Box::new(SynRecipe {
                    name: "N",
                    aug: AugmentConfig::none(),
                }),
                Box::new(SynRecipe {
                    name: "S",
                    aug: AugmentConfig::standard(),
                }),
                Box::new(SynRecipe {
                    name: "F",
                    aug: AugmentConfig::full(),
                }),
                Box::new(RealRecipe),
                Box::new(MixedRecipe),
            ],
        }
    }
}

impl RecipeRegistry {
    pub fn register(&mut self, r: Box<dyn ScaeRecipe>) {
        self.recipes.retain(|e| e.name() != r.name());
        self.recipes.push(r);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ScaeRecipe> {
        self.recipes
            .iter()
            .find(|r| r.name() == name)
            .map(|r| r.as_ref())
            .ok_or_else(|| TrainError::UnknownVariant(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.recipes.iter().map(|r| r.name()).collect()
    }
}

/// Augmentation steps behind each synthetic variant.
pub fn variant_steps(variant: &str) -> Option<Vec<u8>> {
    match variant {
        "N" => Some(vec![]),
        "S" => Some((1..=4).collect()),
        "F" | "FR" => Some((1..=6).collect()),
        "R" => Some(vec![]),
        _ => None,
    }
}

/// A batch of training patches from `set` as an ink tensor with labels.
pub fn sample_batch(
    set: &LineSet,
    aspect: Option<(f64, f64)>,
    indices: &[usize],
    rng: &mut Rng,
) -> (Tensor, Vec<Option<usize>>) {
    let patches: Vec<_> = indices
        .iter()
        .map(|&i| set.training_patch(i, aspect, rng).pixels)
        .collect();
    (
        ink_batch(&patches),
        indices.iter().map(|&i| set.label(i)).collect(),
    )
}

/// Fixed patches used for validation, one per line, seeded by `seed`.
pub fn fixed_patches(set: &LineSet, aspect: Option<(f64, f64)>, seed: u64) -> Vec<Tensor> {
    let mut rng = derived(seed, 0xfa11);
    let idx: Vec<usize> = (0..set.len()).collect();
    idx.chunks(32)
        .map(|c| sample_batch(set, aspect, c, &mut rng).0)
        .collect()
}

/// Σ(x̂ − x)² / Σx² over a set of batches.
pub fn relative_mse(model: &Model, batches: &[Tensor]) -> Result<f64> {
    let mut rng = derived(0, 0);
    let (mut err, mut energy) = (0.0, 0.0);
    for x in batches {
        let acts = forward(model, x, Mode::Eval, &mut rng)?;
        err += acts
            .output()
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        energy += x.data().iter().map(|v| v * v).sum::<f64>();
    }
    Ok(if energy > 0.0 { err / energy } else { 0.0 })
}

/// Held-out sets on which auto-encoder reconstruction is logged.
#[derive(Clone, Debug, Default)]
pub struct ScaeValidation {
    pub syn: Vec<Tensor>,
    pub real: Vec<Tensor>,
}

fn epoch_order(lines: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lines).collect();
    order.shuffle(rng);
    order
}

/// Jointly train encoder and decoder on reconstruction of ink patches at a
/// constant learning rate. Returns the encoder (C_u), the whole
/// auto-encoder and the log.
pub fn train_scae(
    cnn: &NetworkSpec,
    variant: &str,
    src: &ScaeSources,
    val: &ScaeValidation,
    cfg: &TrainConfig,
) -> Result<(ModelFragment, Model, TrainLog)> {
    cfg.validate()?;
    let pool = RecipeRegistry::default().get(variant)?.pool(src)?;
    if pool.lines() == 0 {
        return Err(TrainError::NoData);
    }
    let spec = build_scae(cnn, cnn.k_split)?;
    let mut rng = derived(cfg.seed, 1);
    let mut model = Model::init(spec, &mut rng)?;
    let mut state = SgdState::default();
    let mut log = TrainLog::default();
    let steps = if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        pool.lines().div_ceil(cfg.batch_size)
    };
    let mut orders: Vec<Vec<usize>> = pool
        .sets
        .iter()
        .map(|(s, _)| epoch_order(s.len(), &mut rng))
        .collect();
    let mut cursors = vec![0; pool.sets.len()];
    let mut turn = 0;
    for epoch in 0..cfg.max_epochs {
        let t0 = Instant::now();
        let mut total = 0.0;
        for _ in 0..steps {
            let which = turn % pool.sets.len();
            turn += 1;
            let (set, aspect) = &pool.sets[which];
            let mut idx = Vec::with_capacity(cfg.batch_size);
            while idx.len() < cfg.batch_size {
                if cursors[which] == orders[which].len() {
                    orders[which] = epoch_order(set.len(), &mut rng);
                    cursors[which] = 0;
                }
                idx.push(orders[which][cursors[which]]);
                cursors[which] += 1;
            }
            let (x, _) = sample_batch(set, *aspect, &idx, &mut rng);
            let acts = forward(&model, &x, Mode::Train, &mut rng)?;
            let (loss, grad) = mse_loss(acts.output(), &x)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged(epoch));
            }
            total += loss;
            let grads = backward(&model, &acts, &grad)?;
            sgd_step(&mut model, &grads, &mut state, cfg, cfg.lr0);
        }
        let mut extra = Vec::new();
        if !val.syn.is_empty() {
            extra.push(("val_syn".to_string(), relative_mse(&model, &val.syn)?));
        }
        if !val.real.is_empty() {
            extra.push(("val_real".to_string(), relative_mse(&model, &val.real)?));
        }
        let val_metric = extra.last().map_or(f64::NAN, |e| e.1);
        log.records.push(EpochRecord {
            epoch,
            phase: Phase::Scae,
            lr: cfg.lr0,
            train_loss: total / steps as f64,
            val_metric,
            seconds: t0.elapsed().as_secs_f64(),
            extra,
        });
    }
    let (encoder, _) = split(&model);
    Ok((encoder, model, log))
}

/// Top-1 error of single fixed patches.
pub fn patch_error(model: &Model, batches: &[(Tensor, Vec<usize>)]) -> Result<f64> {
    let mut rng = derived(0, 0);
    let (mut wrong, mut total) = (0usize, 0usize);
    for (x, labels) in batches {
        let acts = forward(model, x, Mode::Eval, &mut rng)?;
        let logits = acts.logits(&model.spec);
        let c = logits.shape()[1];
        for (row, &label) in logits.data().chunks(c).zip(labels) {
            let best = (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            wrong += (best != label) as usize;
            total += 1;
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        wrong as f64 / total as f64
    })
}

/// Fixed labeled validation patches.
pub fn labeled_patches(set: &LineSet, seed: u64) -> Vec<(Tensor, Vec<usize>)> {
    let mut rng = derived(seed, 0x7a1);
    let idx: Vec<usize> = (0..set.len()).filter(|&i| set.label(i).is_some()).collect();
    idx.chunks(32)
        .map(|c| {
            let (x, labels) = sample_batch(set, None, c, &mut rng);
            (x, labels.into_iter().map(|l| l.expect("labeled")).collect())
        })
        .collect()
}

/// Information passed to the per-step observer.
pub struct StepInfo<'a> {
    pub iteration: usize,
    pub epoch: usize,
    pub model: &'a Model,
}

/// Rank projection of one FC layer, reusing the previous right basis.
struct Projector {
    layer: usize,
    k: usize,
    basis: Option<Tensor>,
}

impl Projector {
    fn apply(&mut self, model: &mut Model) -> Result<()> {
        let Weights::Dense(w) = &mut model.params[self.layer].weights else {
            return Err(TrainError::Config(
                "rank-constrained layer must be dense".into(),
            ));
        };
        let d = match &self.basis {
            Some(v0) => svd_warm(w, v0)?,
            None => crate::numerics::svd(w)?,
        };
        *w = d.reconstruct(self.k);
        if d.v.shape()[0] == d.v.shape()[1] {
            self.basis = Some(d.v);
        }
        Ok(())
    }
}

fn supervised_loop(
    mut model: Model,
    train: &LineSet,
    aspect: Option<(f64, f64)>,
    val: &LineSet,
    cfg: &TrainConfig,
    phase: Phase,
    mut projector: Option<Projector>,
    observer: &mut dyn FnMut(&StepInfo),
) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    let labeled: Vec<usize> = (0..train.len())
        .filter(|&i| train.label(i).is_some())
        .collect();
    if labeled.is_empty() {
        return Err(TrainError::NoData);
    }
    let val_batches = labeled_patches(val, cfg.seed);
    let mut rng = derived(cfg.seed, 2);
    let mut state = SgdState::default();
    let mut log = TrainLog::default();
    if let Some(p) = projector.as_mut() {
        p.apply(&mut model)?;
    }
    let mut lr = cfg.lr0;
    let mut best = (patch_error(&model, &val_batches)?, model.clone());
    let (mut stale, mut drops, mut iteration) = (0, 0, 0);
    let steps = if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        labeled.len().div_ceil(cfg.batch_size)
    };
    let mut order = Vec::new();
    let mut cursor = 0;
    for epoch in 0..cfg.max_epochs {
        let t0 = Instant::now();
        let mut total = 0.0;
        for _ in 0..steps {
            let mut idx = Vec::with_capacity(cfg.batch_size);
            while idx.len() < cfg.batch_size {
                if cursor == order.len() {
                    order = labeled.clone();
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                idx.push(order[cursor]);
                cursor += 1;
            }
            let (x, labels) = sample_batch(train, aspect, &idx, &mut rng);
            let labels: Vec<usize> = labels.into_iter().map(|l| l.expect("labeled")).collect();
            let acts = forward(&model, &x, Mode::Train, &mut rng)?;
            let (loss, grad) = softmax_xent(acts.logits(&model.spec), &labels)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged(epoch));
            }
            total += loss;
            let grads = backward(&model, &acts, &grad)?;
            sgd_step(&mut model, &grads, &mut state, cfg, lr);
            if let Some(p) = projector.as_mut() {
                p.apply(&mut model)?;
            }
            observer(&StepInfo {
                iteration,
                epoch,
                model: &model,
            });
            iteration += 1;
        }
        let err = patch_error(&model, &val_batches)?;
        log.records.push(EpochRecord {
            epoch,
            phase,
            lr,
            train_loss: total / steps as f64,
            val_metric: err,
            seconds: t0.elapsed().as_secs_f64(),
            extra: Vec::new(),
        });
        if err < best.0 {
            best = (err, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                if drops == cfg.max_lr_drops {
                    break;
                }
                lr /= cfg.lr_drop_factor;
                drops += 1;
                stale = 0;
            }
        }
    }
    Ok((best.1, log))
}

/// Cross-entropy training of the non-frozen layers on labeled patches,
/// with the patience rule on validation top-1 error. Returns the best
/// validation snapshot.
pub fn train_supervised(
    model: Model,
    train: &LineSet,
    aspect: Option<(f64, f64)>,
    val: &LineSet,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    supervised_loop(
        model,
        train,
        aspect,
        val,
        cfg,
        Phase::Supervised,
        None,
        &mut |_| {},
    )
}

/// Fine-tuning with the named FC layer projected to rank `k` after every
/// step. `observer` sees the model after each projection.
pub fn train_rank_constrained(
    model: Model,
    layer: &str,
    k: usize,
    train: &LineSet,
    aspect: Option<(f64, f64)>,
    val: &LineSet,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&StepInfo),
) -> Result<(Model, TrainLog)> {
    let idx = model
        .spec
        .weighted_index(layer)
        .ok_or_else(|| TrainError::UnknownLayer(layer.to_string()))?;
    if model.params[idx].weights.dense().map(|w| w.shape().len()) != Some(2) {
        return Err(TrainError::Config(format!(
            "{layer} is not a dense FC layer"
        )));
    }
    if k == 0 {
        return Err(TrainError::Config("rank must be at least 1".into()));
    }
    let projector = Projector {
        layer: idx,
        k,
        basis: None,
    };
    supervised_loop(
        model,
        train,
        aspect,
        val,
        cfg,
        Phase::RankFt,
        Some(projector),
        observer,
    )
}

/// Pseudo-real lines for `(class, seed)` pairs.
pub fn render_real_set(
    items: &[(usize, u64)],
    word_len: (usize, usize),
    cfg: &PseudoRealConfig,
    labeled: bool,
) -> Result<LineSet> {
    let images = items
        .iter()
        .map(|&(c, s)| crate::dataset::render_pseudo_real(c, s, word_len, cfg))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(LineSet::new(
        &images,
        items.iter().map(|&(c, _)| labeled.then_some(c)).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_cnn, LayerSpec, Preset};
    use crate::rng::seeded;

    fn tiny_model() -> Model {
        let spec = NetworkSpec::new(
            vec![
                LayerSpec::Pool {
                    window: 15,
                    stride: 15,
                },
                LayerSpec::Fc { out: 8 },
                LayerSpec::Relu,
                LayerSpec::Fc { out: 3 },
                LayerSpec::Softmax,
            ],
            1,
            3,
        )
        .unwrap();
        Model::init(spec, &mut seeded(4)).unwrap()
    }

    fn grads_like(model: &Model, value: f64) -> Gradients {
        Gradients {
            layers: model
                .params
                .iter()
                .map(|p| {
                    let w = p.weights.to_dense();
                    Some((Tensor::full(w.shape(), value), vec![value; p.bias.len()]))
                })
                .collect(),
            input: None,
        }
    }

    #[test]
    fn sgd_zero_gradient_without_decay_is_identity() {
        let mut m = tiny_model();
        let before = m.clone();
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let g = grads_like(&m, 0.0);
        sgd_step(&mut m, &g, &mut SgdState::default(), &cfg, 0.01);
        assert_eq!(m, before);
    }

    #[test]
    fn sgd_first_step_closed_form() {
        let mut m = tiny_model();
        let before = m.clone();
        let cfg = TrainConfig::default();
        let g = 0.3;
        let gr = grads_like(&m, g);
        sgd_step(&mut m, &gr, &mut SgdState::default(), &cfg, 0.01);
        for (a, b) in m.params.iter().zip(&before.params) {
            let (wa, wb) = (a.weights.to_dense(), b.weights.to_dense());
            for (x, y) in wa.data().iter().zip(wb.data()) {
                assert!((x - (y - 0.01 * (g + 0.0005 * y))).abs() < 1e-15);
            }
            for (x, y) in a.bias.iter().zip(&b.bias) {
                assert!((x - (y - 0.01 * g)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sgd_skips_frozen_layers() {
        let mut m = tiny_model();
        m.params[0].frozen = true;
        let before = m.clone();
        let g = grads_like(&m, 1.0);
        sgd_step(
            &mut m,
            &g,
            &mut SgdState::default(),
            &TrainConfig::default(),
            0.1,
        );
        assert_eq!(m.params[0], before.params[0]);
        assert_ne!(m.params[1], before.params[1]);
    }

    #[test]
    fn recipes_and_steps() {
        let reg = RecipeRegistry::default();
        assert_eq!(reg.names(), ["N", "S", "F", "R", "FR"]);
        let src = ScaeSources {
            syn: vec![(0, 1), (1, 2)],
            word_len: (6, 10),
            real: None,
        };
        assert!(matches!(
            reg.get("R").unwrap().pool(&src),
            Err(TrainError::MissingReal(_))
        ));
        assert!(matches!(
            reg.get("FR").unwrap().pool(&src),
            Err(TrainError::MissingReal(_))
        ));
        let f = reg.get("F").unwrap().pool(&src).unwrap();
        assert_eq!(f.sets[0].1, Some((5.0 / 6.0, 7.0 / 6.0)));
        assert_eq!(reg.get("S").unwrap().pool(&src).unwrap().sets[0].1, None);
        assert!(reg.get("X").is_err());
        assert_eq!(variant_steps("S").unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn log_csv_has_fixed_columns() {
        let log = TrainLog {
            records: vec![EpochRecord {
                epoch: 0,
                phase: Phase::Scae,
                lr: 0.01,
                train_loss: 1.0,
                val_metric: 0.5,
                seconds: 0.1,
                extra: vec![("val_real".into(), 0.5)],
            }],
        };
        let csv = log.to_csv();
        assert!(csv.starts_with("epoch,phase,lr,train_loss,val_metric,seconds,val_real\n"));
        assert!(csv.contains("0,SCAE,0.01,"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            lr_drop_factor: 1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        let _ = build_cnn(Preset::Desk, 3, 2).unwrap();
    }
}
