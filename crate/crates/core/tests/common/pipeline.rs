//! Shared experiment state for the acceptance run. Artifacts produced by
//! one criterion (trained models, encoders) are reused by later ones and
//! built on demand when a criterion runs alone.

use std::collections::BTreeMap;

use fontid_core::augment::AugmentConfig;
use fontid_core::dataset::{
    ink_batch, make_domain, render_syn, Domain, DomainConfig, LineSet, PseudoRealConfig,
};
use fontid_core::evalsim::{predict_set, topk_error, MultiView, SimilarityIndex, ViewProtocol};
use fontid_core::glyphgen::FontClass;
use fontid_core::image::GrayImage;
use fontid_core::network::{build_cnn, forward, import_cu, Mode, Model, ModelFragment, Preset};
use fontid_core::rng::{derive_seed, seeded, Rng};
use fontid_core::training::{
    fixed_patches, relative_mse, render_real_set, train_scae, train_supervised, ScaeSources,
    ScaeValidation, TrainConfig,
};

pub const WORD_LEN: (usize, usize) = (6, 10);
const K_SPLIT: usize = 2;

/// Ten-class recognition task.
const RECOGNIZER_CLASSES: usize = 10;
const RECOGNIZER_EPOCHS: usize = 40;

/// Domain-adaptation experiments use two variants of every glyph family so
/// that top-5 error is informative and every class has a same-family twin.
pub const ADAPT_CLASSES: usize = 24;
pub const SEEDS: [u64; 3] = [101, 202, 303];
const SCAE_LINES: usize = 400;
const SCAE_VAL_LINES: usize = 96;
const SCAE_EPOCHS: usize = 10;
const ADAPT_TRAIN_PER_CLASS: usize = 100;
const ADAPT_VAL_PER_CLASS: usize = 20;
const ADAPT_TEST_PER_CLASS: usize = 20;
const ADAPT_EPOCHS: usize = 25;

pub fn aspect() -> Option<(f64, f64)> {
    let a = AugmentConfig::full();
    Some(a.aspect_ratio_range)
}

fn domain_cfg(n_classes: usize) -> DomainConfig {
    DomainConfig {
        n_classes,
        ..DomainConfig::default()
    }
}

fn labels(set: &LineSet) -> Vec<usize> {
    set.labels().iter().map(|l| l.expect("labeled")).collect()
}

pub fn rank_ft_config() -> TrainConfig {
    TrainConfig {
        lr0: 0.001,
        max_epochs: 6,
        steps_per_epoch: 90,
        seed: 44,
        ..TrainConfig::default()
    }
}

/// Mean pre-softmax output over the fifteen views drawn from `rng`.
pub fn multiview_logits(model: &Model, img: &GrayImage, mut rng: Rng) -> Vec<f64> {
    let views = MultiView.views(img, &mut rng);
    let acts = forward(model, &ink_batch(&views), Mode::Eval, &mut rng).expect("forward");
    let logits = acts.logits(&model.spec);
    let c = logits.shape()[1];
    let n = logits.shape()[0] as f64;
    let mut mean = vec![0.0; c];
    for row in logits.data().chunks(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    mean
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn protocol_images() -> Vec<GrayImage> {
    let cfg = domain_cfg(RECOGNIZER_CLASSES);
    make_domain(&cfg, Domain::PseudoReal, 2, 0x10)
        .expect("render")
        .images
}

/// Fraction of classes whose nearest other class shares at least two of
/// the three dominant generating traits.
pub fn trait_consistency(index: &SimilarityIndex) -> f64 {
    let classes = index.classes();
    let shared = |a: usize, b: usize| {
        let (x, y) = (
            FontClass::from_id(a).dominant_traits(),
            FontClass::from_id(b).dominant_traits(),
        );
        (x.0 == y.0) as usize + (x.1 == y.1) as usize + (x.2 == y.2) as usize
    };
    let hits = classes
        .iter()
        .filter(|&&c| {
            let nearest = classes
                .iter()
                .filter(|&&o| o != c)
                .min_by(|&&a, &&b| {
                    index
                        .distance(c, a)
                        .unwrap()
                        .total_cmp(&index.distance(c, b).unwrap())
                        .then(a.cmp(&b))
                })
                .copied()
                .expect("at least two classes");
            shared(c, nearest) >= 2
        })
        .count();
    hits as f64 / classes.len() as f64
}

pub struct Recognizer {
    pub model: Model,
    pub val_accuracy: f64,
    pub val_lines: usize,
}

pub struct ScaeRun {
    pub seed: u64,
    /// Variant to (N-domain, pseudo-real) relative MSE.
    pub mse: BTreeMap<&'static str, (f64, f64)>,
    pub encoders: BTreeMap<&'static str, ModelFragment>,
}

pub struct AdaptationRun {
    pub seed: u64,
    /// (FR-import, F-only, R-import)
    pub top5: (f64, f64, f64),
    pub top1: (f64, f64, f64),
    pub f_only: Model,
}

#[derive(Default)]
pub struct Experiments {
    recognizer_data: Option<(LineSet, LineSet)>,
    recognizer: Option<Recognizer>,
    rank_model: Option<Model>,
    scae: Option<Vec<ScaeRun>>,
    adaptation: Option<Vec<AdaptationRun>>,
}

impl Experiments {
    pub fn recognizer_data(&mut self) -> (LineSet, LineSet) {
        self.recognizer_data
            .get_or_insert_with(|| {
                let cfg = domain_cfg(RECOGNIZER_CLASSES);
                let train = make_domain(&cfg, Domain::Syn, 200, 11)
                    .expect("render")
                    .line_set();
                let val = make_domain(&cfg, Domain::Syn, 50, 12)
                    .expect("render")
                    .line_set();
                (train, val)
            })
            .clone()
    }

    pub fn recognizer(&mut self) -> &Recognizer {
        if self.recognizer.is_none() {
            let (train, val) = self.recognizer_data();
            let spec = build_cnn(Preset::Desk, RECOGNIZER_CLASSES, K_SPLIT).expect("desk spec");
            let model = Model::init(spec, &mut seeded(1)).expect("init");
            let cfg = TrainConfig {
                max_epochs: RECOGNIZER_EPOCHS,
                seed: 1,
                ..TrainConfig::default()
            };
            let (model, log) =
                train_supervised(model, &train, aspect(), &val, &cfg).expect("training");
            for r in &log.records {
                println!(
                    "    epoch {:>2} lr {:<7} loss {:.4} val patch error {:.4}",
                    r.epoch, r.lr, r.train_loss, r.val_metric
                );
            }
            let preds = predict_set(&model, &val, &MultiView, 5).expect("predict");
            let err = topk_error(&preds, &labels(&val), 1).expect("error");
            self.recognizer = Some(Recognizer {
                model,
                val_accuracy: 1.0 - err,
                val_lines: val.len(),
            });
        }
        self.recognizer.as_ref().unwrap()
    }

    pub fn set_rank_model(&mut self, m: Model) {
        self.rank_model = Some(m);
    }

    /// The rank-constrained fine-tune of the recognizer, run without
    /// per-step checks when criterion 4 was skipped.
    pub fn rank_model(&mut self) -> &Model {
        if self.rank_model.is_none() {
            let base = self.recognizer().model.clone();
            let (train, val) = self.recognizer_data();
            let (m, _) = fontid_core::training::train_rank_constrained(
                base,
                "fc5",
                16,
                &train,
                aspect(),
                &val,
                &rank_ft_config(),
                &mut |_| {},
            )
            .expect("rank-constrained training");
            self.rank_model = Some(m);
        }
        self.rank_model.as_ref().unwrap()
    }

    /// The first `n / 10` validation lines of every class.
    pub fn test_images(&mut self, n: usize) -> Vec<GrayImage> {
        let (_, val) = self.recognizer_data();
        let per_class = n / RECOGNIZER_CLASSES;
        let mut taken = vec![0; RECOGNIZER_CLASSES];
        let mut out = Vec::new();
        for i in 0..val.len() {
            let c = val.label(i).unwrap();
            if taken[c] < per_class {
                taken[c] += 1;
                out.push(val.image(i));
            }
        }
        out
    }

    pub fn scae_grid(&mut self) -> &[ScaeRun] {
        if self.scae.is_none() {
            let runs = SEEDS.iter().map(|&seed| scae_run(seed)).collect();
            self.scae = Some(runs);
        }
        self.scae.as_deref().unwrap()
    }

    pub fn adaptation_runs(&mut self) -> &[AdaptationRun] {
        if self.adaptation.is_none() {
            self.scae_grid();
            let runs = self
                .scae
                .as_ref()
                .unwrap()
                .iter()
                .map(|s| adaptation_run(s.seed, &s.encoders["FR"], &s.encoders["R"]))
                .collect();
            self.adaptation = Some(runs);
        }
        self.adaptation.as_deref().unwrap()
    }

    /// The first F-only adaptation model with labeled synthetic lines of
    /// every class.
    pub fn similarity_model(&mut self) -> (Model, LineSet) {
        let model = match &self.adaptation {
            Some(runs) => runs[0].f_only.clone(),
            None => adaptation_data(SEEDS[0]).train_f_only(SEEDS[0]),
        };
        let cfg = DomainConfig {
            augment: AugmentConfig::none(),
            ..domain_cfg(ADAPT_CLASSES)
        };
        let set = make_domain(&cfg, Domain::Syn, 20, 0x5151)
            .expect("render")
            .line_set();
        (model, set)
    }
}

fn scae_run(seed: u64) -> ScaeRun {
    let syn: Vec<(usize, u64)> = (0..SCAE_LINES)
        .map(|i| (i % ADAPT_CLASSES, derive_seed(seed, i as u64)))
        .collect();
    let real_items: Vec<(usize, u64)> = (0..SCAE_LINES)
        .map(|i| (i % ADAPT_CLASSES, derive_seed(seed ^ 0xa, i as u64)))
        .collect();
    let pr = PseudoRealConfig::default();
    let real = render_real_set(&real_items, WORD_LEN, &pr, false).expect("render");
    let val_items: Vec<(usize, u64)> = (0..SCAE_VAL_LINES)
        .map(|i| (i % ADAPT_CLASSES, derive_seed(seed ^ 0xb, i as u64)))
        .collect();
    let val_real = render_real_set(&val_items, WORD_LEN, &pr, false).expect("render");
    let val_syn_images: Vec<GrayImage> = val_items
        .iter()
        .map(|&(c, s)| render_syn(c, s, WORD_LEN, &AugmentConfig::none()).expect("render"))
        .collect();
    let val_syn = LineSet::new(&val_syn_images, vec![None; val_items.len()]);
    let val = ScaeValidation {
        syn: fixed_patches(&val_syn, None, seed),
        real: fixed_patches(&val_real, None, seed),
    };
    let src = ScaeSources {
        syn,
        word_len: WORD_LEN,
        real: Some(real),
    };
    let spec = build_cnn(Preset::Desk, ADAPT_CLASSES, K_SPLIT).expect("desk spec");
    let cfg = TrainConfig {
        max_epochs: SCAE_EPOCHS,
        seed,
        ..TrainConfig::default()
    };
    let mut mse = BTreeMap::new();
    let mut encoders = BTreeMap::new();
    for v in ["N", "S", "F", "R", "FR"] {
        let (enc, model, _) =
            train_scae(&spec, v, &src, &val, &cfg).expect("auto-encoder training");
        let syn_mse = relative_mse(&model, &val.syn).expect("mse");
        let real_mse = relative_mse(&model, &val.real).expect("mse");
        mse.insert(v, (syn_mse, real_mse));
        encoders.insert(v, enc);
    }
    ScaeRun {
        seed,
        mse,
        encoders,
    }
}

struct AdaptationData {
    train: LineSet,
    val: LineSet,
    test: LineSet,
}

fn adaptation_data(seed: u64) -> AdaptationData {
    let cfg = domain_cfg(ADAPT_CLASSES);
    AdaptationData {
        train: make_domain(
            &cfg,
            Domain::Syn,
            ADAPT_TRAIN_PER_CLASS,
            derive_seed(seed, 1),
        )
        .expect("render")
        .line_set(),
        val: make_domain(&cfg, Domain::Syn, ADAPT_VAL_PER_CLASS, derive_seed(seed, 2))
            .expect("render")
            .line_set(),
        test: make_domain(
            &cfg,
            Domain::PseudoReal,
            ADAPT_TEST_PER_CLASS,
            derive_seed(seed, 3),
        )
        .expect("render")
        .line_set(),
    }
}

impl AdaptationData {
    fn train(&self, seed: u64, encoder: Option<&ModelFragment>) -> Model {
        let spec = build_cnn(Preset::Desk, ADAPT_CLASSES, K_SPLIT).expect("desk spec");
        let mut model = Model::init(spec, &mut seeded(seed)).expect("init");
        if let Some(enc) = encoder {
            import_cu(&mut model, enc).expect("import");
        }
        let cfg = TrainConfig {
            max_epochs: ADAPT_EPOCHS,
            seed,
            ..TrainConfig::default()
        };
        train_supervised(model, &self.train, aspect(), &self.val, &cfg)
            .expect("training")
            .0
    }

    fn train_f_only(&self, seed: u64) -> Model {
        self.train(seed, None)
    }

    fn errors(&self, model: &Model) -> (f64, f64) {
        let preds = predict_set(model, &self.test, &MultiView, 7).expect("predict");
        let l = labels(&self.test);
        (
            topk_error(&preds, &l, 1).unwrap(),
            topk_error(&preds, &l, 5).unwrap(),
        )
    }
}

fn adaptation_run(seed: u64, fr: &ModelFragment, r: &ModelFragment) -> AdaptationRun {
    let data = adaptation_data(seed);
    let fr_model = data.train(seed, Some(fr));
    let f_only = data.train_f_only(seed);
    let r_model = data.train(seed, Some(r));
    let (a1, a5) = data.errors(&fr_model);
    let (b1, b5) = data.errors(&f_only);
    let (c1, c5) = data.errors(&r_model);
    AdaptationRun {
        seed,
        top5: (a5, b5, c5),
        top1: (a1, b1, c1),
        f_only,
    }
}
