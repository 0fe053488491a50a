use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use fontid_core::compress::{compress_layer, model_size_report, CompressorRegistry};
use fontid_core::dataset::{make_domain, Domain, DomainConfig, LineSet};
use fontid_core::evalsim::{
    build_similarity, eval_report, most_similar, predict_set, topk_error, ViewRegistry,
};
use fontid_core::network::{build_cnn, import_cu, split, Model, Preset};
use fontid_core::rng::derived;
use fontid_core::training::{
    train_rank_constrained, train_scae, train_supervised, RecipeRegistry, ScaeSources, TrainLog,
};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{holdout_sets, write_dir, DataDir};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "fontid",
    version,
    about = "Font recognition from text-line images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labeled dataset directory.
    Gen(GenArgs),
    /// Pretrain a convolutional auto-encoder and save it.
    TrainScae(TrainScaeArgs),
    /// Train the classifier, optionally importing a pretrained encoder.
    Train(TrainArgs),
    /// Factorize one FC layer.
    Compress(CompressArgs),
    /// Top-1/top-5 error over a dataset directory.
    Eval(EvalArgs),
    /// Nearest font classes by representative features.
    Similar(SimilarArgs),
    /// Decomposition-index sweep, or the auto-encoder variant grid.
    SweepK(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long, value_parser = parse_domain)]
    pub domain: Domain,
    /// Drop class ids from pseudo-real manifests.
    #[arg(long)]
    pub unlabeled: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainScaeArgs {
    #[arg(long)]
    pub variant: String,
    #[arg(long)]
    pub syn: PathBuf,
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the output path with a `.csv` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scae_encoder: Option<PathBuf>,
    #[arg(long)]
    pub syn: PathBuf,
    /// Validation set; defaults to every fifth line of `--syn`.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub layer: String,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_parser = ["lossy", "lossless"])]
    pub mode: String,
    /// Labeled data for rank-constrained fine-tuning before a lossless export.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Size report CSV; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "multi", value_parser = ["single", "multi"])]
    pub views: String,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimilarArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub query_class: usize,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub syn: PathBuf,
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// Labeled evaluation set; defaults to the validation split of `--syn`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub k_list: Vec<usize>,
    /// Auto-encoder variants to compare instead of sweeping K.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    s.parse()
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    RunConfig::load(path.as_deref()).map_err(CliError::Usage)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_log(log: &TrainLog, explicit: &Option<PathBuf>, out: &Path) -> Result<(), CliError> {
    let path = explicit
        .clone()
        .unwrap_or_else(|| out.with_extension("csv"));
    write_text(&path, &log.to_csv())
}

fn save_model(model: &Model, out: &Path) -> Result<(), CliError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    checkpoint::save(model, out)?;
    Ok(())
}

pub fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::TrainScae(a) => cmd_train_scae(a),
        Command::Train(a) => cmd_train(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Similar(a) => cmd_similar(a),
        Command::SweepK(a) => cmd_sweep_k(a),
    }
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    if a.classes == 0 {
        return Err(CliError::Usage("--classes must be at least 1".into()));
    }
    let cfg = DomainConfig {
        n_classes: a.classes,
        unlabeled: a.unlabeled,
        ..DomainConfig::default()
    };
    let generated = make_domain(&cfg, a.domain, a.per_class, a.seed)?;
    write_dir(&a.out, &generated)?;
    println!(
        "wrote {} images to {}",
        generated.images.len(),
        a.out.display()
    );
    Ok(())
}

fn scae_sources(syn: &DataDir, real: Option<&DataDir>) -> ScaeSources {
    ScaeSources {
        syn: syn
            .manifest
            .entries
            .iter()
            .map(|e| (e.class.unwrap_or(0), e.seed))
            .collect(),
        word_len: DomainConfig::default().word_len,
        real: real.map(DataDir::unlabeled),
    }
}

/// Trains one auto-encoder variant; returns the auto-encoder model and log.
fn run_scae(
    variant: &str,
    syn: &DataDir,
    real: Option<&DataDir>,
    k: usize,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(Model, TrainLog), CliError> {
    RecipeRegistry::default().get(variant)?;
    if !syn.is_domain(Domain::Syn) {
        return Err(CliError::Data("--syn must be a synthetic dataset".into()));
    }
    let classes = syn.manifest.classes;
    let spec = build_cnn(Preset::Desk, classes, k)?;
    let holdout = holdout_sets(classes, cfg.holdout_per_class.unwrap_or(4), seed)?;
    let (_, scae, log) = train_scae(
        &spec,
        variant,
        &scae_sources(syn, real),
        &holdout,
        &cfg.scae(seed),
    )?;
    Ok((scae, log))
}

fn cmd_train_scae(a: TrainScaeArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    RecipeRegistry::default().get(&a.variant)?;
    if matches!(a.variant.as_str(), "R" | "FR") && a.real.is_none() {
        return Err(CliError::Data(format!(
            "variant {} needs --real",
            a.variant
        )));
    }
    let syn = DataDir::load(&a.syn)?;
    let real = a.real.as_deref().map(DataDir::load).transpose()?;
    let (scae, log) = run_scae(&a.variant, &syn, real.as_ref(), a.k, &cfg, a.seed)?;
    save_model(&scae, &a.out)?;
    write_log(&log, &a.log, &a.out)?;
    if let Some(last) = log.records.last() {
        println!(
            "variant {} final relative MSE {:.4}",
            a.variant, last.val_metric
        );
    }
    Ok(())
}

fn supervised(
    syn: &DataDir,
    val: Option<&DataDir>,
    encoder: Option<&Model>,
    k: usize,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(Model, TrainLog), CliError> {
    let spec = build_cnn(Preset::Desk, syn.manifest.classes, k)?;
    let mut model = Model::init(spec, &mut derived(seed, 0x7e11))?;
    if let Some(enc) = encoder {
        if enc.spec.k_split != k {
            return Err(CliError::Usage(format!(
                "encoder was trained with K={}, --k is {k}",
                enc.spec.k_split
            )));
        }
        import_cu(&mut model, &split(enc).0)?;
    }
    let (train, val_set) = match val {
        Some(v) => (syn.line_set(), v.line_set()),
        None => syn.split(),
    };
    Ok(train_supervised(
        model,
        &train,
        syn.aspect(),
        &val_set,
        &cfg.train(seed),
    )?)
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let syn = DataDir::load(&a.syn)?;
    build_cnn(Preset::Desk, syn.manifest.classes, a.k)?;
    let encoder = a
        .scae_encoder
        .as_deref()
        .map(checkpoint::load)
        .transpose()?;
    let val = a.val.as_deref().map(DataDir::load).transpose()?;
    let (model, log) = supervised(&syn, val.as_ref(), encoder.as_ref(), a.k, &cfg, a.seed)?;
    save_model(&model, &a.out)?;
    write_log(&log, &a.log, &a.out)?;
    if let Some(best) = log.records.iter().map(|r| r.val_metric).reduce(f64::min) {
        println!("best validation top-1 error {best:.4}");
    }
    Ok(())
}

fn cmd_compress(a: CompressArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let mut model = checkpoint::load(&a.model)?;
    if a.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    if model.spec.weighted_index(&a.layer).is_none() {
        return Err(CliError::Usage(format!("unknown layer {:?}", a.layer)));
    }
    if let (Some(dir), "lossless") = (&a.data, a.mode.as_str()) {
        let data = DataDir::load(dir)?;
        let (train, val) = data.split();
        let (tuned, _) = train_rank_constrained(
            model,
            &a.layer,
            a.k,
            &train,
            data.aspect(),
            &val,
            &cfg.rank_ft(a.seed),
            &mut |_| {},
        )?;
        model = tuned;
    }
    let registry = CompressorRegistry::default();
    let compressed = compress_layer(&model, &a.layer, a.k, registry.get(&a.mode)?)?;
    save_model(&compressed, &a.out)?;
    let report = model_size_report(&compressed)?;
    match &a.report {
        Some(p) => write_text(p, &report.to_csv())?,
        None => print!("{}", report.to_csv()),
    }
    println!(
        "total {} -> {} ratio {}",
        report.total_before,
        report.total_after,
        report.ratio()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let model = checkpoint::load(&a.model)?;
    let data = DataDir::load(&a.data)?;
    let registry = ViewRegistry::default();
    let protocol = registry.get(&a.views)?;
    let set = data.line_set();
    let preds = predict_set(&model, &set, protocol, a.seed)?;
    if let Some(p) = &a.report {
        write_text(p, &eval_report(&preds, set.labels()))?;
    }
    let (lp, labels): (Vec<_>, Vec<usize>) = preds
        .into_iter()
        .zip(set.labels())
        .filter_map(|(p, l)| l.map(|l| (p, l)))
        .unzip();
    if labels.is_empty() {
        println!("no labeled entries; predictions only");
        return Ok(());
    }
    println!(
        "top1 {:.4} top5 {:.4} ({} images)",
        topk_error(&lp, &labels, 1)?,
        topk_error(&lp, &labels, 5)?,
        labels.len()
    );
    Ok(())
}

fn cmd_similar(a: SimilarArgs) -> Result<(), CliError> {
    let model = checkpoint::load(&a.model)?;
    let data = DataDir::load(&a.data)?;
    let index = build_similarity(&model, &data.line_set(), a.per_class, a.seed)?;
    let mut out = String::from("query,rank,class,distance\n");
    for (rank, (c, d)) in most_similar(&index, a.query_class, a.top)?
        .into_iter()
        .enumerate()
    {
        let _ = writeln!(out, "{},{},{c},{d:.6}", a.query_class, rank + 1);
    }
    print!("{out}");
    Ok(())
}

fn cmd_sweep_k(a: SweepArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let syn = DataDir::load(&a.syn)?;
    let real = a.real.as_deref().map(DataDir::load).transpose()?;
    if a.k_list.is_empty() {
        return Err(CliError::Usage("--k-list is empty".into()));
    }
    let mut out = String::new();
    if let Some(variants) = &a.variants {
        let k = a.k_list[0];
        out.push_str("variant,k,mse_syn,mse_real\n");
        for v in variants {
            let (_, log) = run_scae(v, &syn, real.as_ref(), k, &cfg, a.seed)?;
            let last = log
                .records
                .last()
                .ok_or_else(|| CliError::Numeric("empty training log".into()))?;
            let get = |name: &str| {
                last.extra
                    .iter()
                    .find(|(n, _)| n == name)
                    .map_or(f64::NAN, |e| e.1)
            };
            let _ = writeln!(out, "{v},{k},{:.6},{:.6}", get("val_syn"), get("val_real"));
        }
    } else {
        let test = a.test.as_deref().map(DataDir::load).transpose()?;
        let test_set: LineSet = match &test {
            Some(t) => t.line_set(),
            None => syn.split().1,
        };
        let labels: Vec<usize> = test_set
            .labels()
            .iter()
            .map(|l| l.unwrap_or(usize::MAX))
            .collect();
        out.push_str("k,top1,top5\n");
        let variant = if real.is_some() { "FR" } else { "F" };
        for &k in &a.k_list {
            build_cnn(Preset::Desk, syn.manifest.classes, k)?;
            let (scae, _) = run_scae(variant, &syn, real.as_ref(), k, &cfg, a.seed)?;
            let (model, _) = supervised(&syn, None, Some(&scae), k, &cfg, a.seed)?;
            let preds = predict_set(
                &model,
                &test_set,
                ViewRegistry::default().get("multi")?,
                a.seed,
            )?;
            let _ = writeln!(
                out,
                "{k},{:.6},{:.6}",
                topk_error(&preds, &labels, 1)?,
                topk_error(&preds, &labels, 5)?
            );
        }
    }
    write_text(&a.report, &out)?;
    print!("{out}");
    Ok(())
}
