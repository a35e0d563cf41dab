#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use siamese_zsl::config::{BackboneKind, RunConfig};
use siamese_zsl::data::{
    self, import_embeddings, load_manifest, load_pairs, read_manifest, read_species_list,
    save_pairs, synth_generate, Dataset, EmbeddingStore, Partition, Scope, SplitManifest,
    SplitParams, SynthConfig,
};
use siamese_zsl::gradcheck::{self, GradCheckConfig};
use siamese_zsl::loss::PairLabel;
use siamese_zsl::metrics::{self, MetricsReport};
use siamese_zsl::network::{load_checkpoint, save_checkpoint, BackboneMode, ModelParameters};
use siamese_zsl::trainer::{self, InputSource, DEFAULT_THRESHOLD};
use siamese_zsl::{seed, Error, Result};

#[derive(Parser)]
#[command(
    name = "siamese-zsl",
    version,
    about = "Siamese contrastive verification with zero-shot evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a dataset manifest into train / validation / test.
    Split(SplitArgs),
    /// Train the embedding network; writes a checkpoint and an epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on balanced test pairs of one scope.
    Eval(EvalArgs),
    /// Evaluate a fixed pair list over a grid of thresholds.
    Sweep(SweepArgs),
    /// Macro F1 for every pair of species in a chosen set.
    Pairmatrix(PairMatrixArgs),
    /// Generate a procedural image dataset with seen and unseen species.
    Synth(SynthArgs),
    /// Export per-sample embeddings to an EMBV file.
    Embed(EmbedArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

/// Where per-sample inputs come from: decoded images or precomputed features.
#[derive(Args, Clone)]
struct SourceArgs {
    /// Image manifest (`id,species,path`).
    #[arg(long, conflicts_with = "features")]
    manifest: Option<PathBuf>,
    /// Precomputed feature file (EMBV); selects the precomputed backbone.
    #[arg(long)]
    features: Option<PathBuf>,
}

enum Source {
    Images(Dataset),
    Features(EmbeddingStore),
}

impl Source {
    fn load(args: &SourceArgs) -> Result<Self> {
        match (&args.manifest, &args.features) {
            (Some(m), None) => Ok(Self::Images(load_manifest(m)?)),
            (None, Some(f)) => Ok(Self::Features(import_embeddings(f)?)),
            _ => Err(Error::InvalidArgument(
                "exactly one of --manifest or --features is required".into(),
            )),
        }
    }

    fn input(&self) -> &dyn InputSource {
        match self {
            Self::Images(d) => d,
            Self::Features(s) => s,
        }
    }

    fn feature_dim(&self) -> Option<usize> {
        match self {
            Self::Images(_) => None,
            Self::Features(s) => Some(s.dim()),
        }
    }
}

#[derive(Args)]
struct SplitArgs {
    /// Dataset manifest (`id,species,path`).
    #[arg(long)]
    manifest: PathBuf,
    /// Output split manifest.
    #[arg(long)]
    out: PathBuf,
    /// Species with fewer samples are held out entirely as unseen.
    #[arg(long, default_value_t = 1000)]
    min_count: usize,
    /// Fraction of each seen species moved to test.
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
    /// Fraction of the remaining seen samples used for validation.
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
    /// File listing extra unseen species, one per line.
    #[arg(long)]
    unseen_list: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Training hyperparameters. Unset flags fall back to the config file, then
/// to the built-in defaults shown.
#[derive(Args, Default)]
struct Overrides {
    /// Contrastive margin [default: 1.0]
    #[arg(long)]
    margin: Option<f64>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Pairs per mini-batch [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Maximum number of epochs [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs without validation-loss improvement before stopping [default: 7]
    #[arg(long)]
    patience: Option<usize>,
    /// Square input resolution of the builtin backbone [default: 64]
    #[arg(long)]
    input_size: Option<usize>,
    /// L2-normalize embeddings (true|false) [default: true]
    #[arg(long)]
    normalize: Option<String>,
    /// builtin | precomputed [default: builtin, or precomputed with --features]
    #[arg(long)]
    backbone: Option<String>,
    /// Dropout rate before the embedding layer [default: 0.2]
    #[arg(long)]
    dropout: Option<f64>,
    /// Fraction of positive pairs [default: 0.5]
    #[arg(long)]
    pos_ratio: Option<f64>,
    /// Training pairs per epoch [default: 4 x train samples, at most 50000]
    #[arg(long)]
    pairs_per_epoch: Option<usize>,
    /// Seed for every random stream of the run [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn to_run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig {
            margin: self.margin,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            input_size: self.input_size,
            dropout: self.dropout,
            pos_ratio: self.pos_ratio,
            pairs_per_epoch: self.pairs_per_epoch,
            seed: self.seed,
            ..RunConfig::default()
        };
        if let Some(v) = &self.normalize {
            cfg.set("normalize", v)?;
        }
        if let Some(v) = &self.backbone {
            cfg.backbone = Some(v.parse::<BackboneKind>()?);
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Split manifest from `split`.
    #[arg(long)]
    split: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Epoch log (CSV) [default: <out>.log.csv]
    #[arg(long)]
    log: Option<PathBuf>,
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// seen | unseen | all
    #[arg(long, default_value = "all")]
    scope: String,
    /// Scores below the threshold are predicted similar.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Number of test pairs to sample.
    #[arg(long, default_value_t = 2000)]
    pairs: usize,
    #[arg(long, default_value_t = 0.5)]
    pos_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report.csv, confusion.txt and pairs.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pair list (`id_a,id_b,label`), e.g. the pairs.csv written by `eval`.
    #[arg(long)]
    pairs: PathBuf,
    /// Threshold grid `start:stop:step`.
    #[arg(long, default_value = "0.1:0.9:0.1")]
    grid: String,
    /// Output CSV, one row per threshold.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PairMatrixArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Comma-separated species for the rows [default: random draw from --scope].
    #[arg(long, value_delimiter = ',')]
    rows: Vec<String>,
    /// Comma-separated species for the columns [default: same as rows].
    #[arg(long, value_delimiter = ',')]
    cols: Vec<String>,
    /// Species drawn when --rows is not given.
    #[arg(long, default_value_t = 5)]
    num_species: usize,
    /// Test-partition scope to draw species from: seen | unseen | all
    #[arg(long, default_value = "unseen")]
    scope: String,
    #[arg(long, default_value_t = 200)]
    pairs_per_cell: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    seen: usize,
    #[arg(long, default_value_t = 6)]
    unseen: usize,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Restrict to one partition of this split.
    #[arg(long, requires = "partition")]
    split: Option<PathBuf>,
    /// train | validation | test
    #[arg(long, requires = "split")]
    partition: Option<String>,
    /// Output EMBV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random instances per check.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Coordinates perturbed per input tensor.
    #[arg(long, default_value_t = 24)]
    coords: usize,
    /// Print every check, not only failures.
    #[arg(long)]
    verbose: bool,
}

/// `mi_option_purge_delay` in mimalloc's option enum.
const MI_OPTION_PURGE_DELAY: libmimalloc_sys::mi_option_t = 15;

fn main() -> ExitCode {
    // Training frees and reallocates the same large activation buffers every
    // batch; returning them to the OS in between costs a page fault per 4 KiB.
    // SAFETY: plain option store, called before any worker threads exist.
    unsafe { libmimalloc_sys::mi_option_set(MI_OPTION_PURGE_DELAY, -1) };
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let line = msg
                .lines()
                .next()
                .unwrap_or("invalid usage")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Pairmatrix(a) => cmd_pairmatrix(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    }
}

fn load_model(path: &Path) -> Result<ModelParameters<f32>> {
    load_checkpoint(path).map_err(|e| with_path(path, e))
}

fn load_split(path: &Path) -> Result<SplitManifest> {
    SplitManifest::load(path).map_err(|e| with_path(path, e))
}

fn check_source_matches(model: &ModelParameters<f32>, source: &Source) -> Result<()> {
    match (model.config.backbone, source) {
        (BackboneMode::Builtin { .. }, Source::Features(_)) => Err(Error::InvalidArgument(
            "checkpoint uses the builtin backbone; pass --manifest".into(),
        )),
        (BackboneMode::Precomputed { .. }, Source::Images(_)) => Err(Error::InvalidArgument(
            "checkpoint uses precomputed features; pass --features".into(),
        )),
        _ => Ok(()),
    }
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let rows = read_manifest(&a.manifest).map_err(|e| with_path(&a.manifest, e))?;
    let catalog = data::catalog_of(&rows)?;
    let unseen_species: BTreeSet<String> = match &a.unseen_list {
        Some(p) => read_species_list(p)
            .map_err(|e| with_path(p, e))?
            .into_iter()
            .collect(),
        None => BTreeSet::new(),
    };
    let params = SplitParams {
        min_count: a.min_count,
        test_frac: a.test_frac,
        val_frac: a.val_frac,
        seed: a.seed,
        unseen_species,
    };
    let split = data::make_split(&catalog, &params)?;
    split.save(&a.out)?;
    println!("{}", split.census());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file_cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let run_cfg = file_cfg.merged_with(&a.overrides.to_run_config()?);
    // Validate everything that does not need the data before loading it.
    let feature_hint = a.source.features.as_ref().map(|_| 1);
    run_cfg.resolve(feature_hint)?;

    let split = load_split(&a.split)?;
    let source = Source::load(&a.source)?;
    let cfg = run_cfg.resolve(source.feature_dim())?;
    if let (Source::Images(d), BackboneMode::Builtin { .. }) = (&source, cfg.model.backbone) {
        let want = cfg.model.backbone.sample_shape();
        let got = d.input_shape();
        if got != want {
            return Err(Error::Config(format!(
                "images are {got:?} (HWC) but the backbone expects {want:?}; set input_size to match"
            )));
        }
    }

    let outcome = trainer::train(source.input(), &split, &cfg)?;
    save_checkpoint(&outcome.params, &a.out)?;
    let log_path = a
        .log
        .unwrap_or_else(|| PathBuf::from(format!("{}.log.csv", a.out.display())));
    outcome.log.save(&log_path)?;

    let eval = trainer::evaluate_model(
        &outcome.params,
        source.input(),
        &outcome.val_pairs,
        DEFAULT_THRESHOLD,
    )?;
    let best = outcome
        .log
        .epochs
        .iter()
        .find(|r| r.epoch == outcome.best_epoch)
        .map(|r| r.val_loss)
        .unwrap_or(f64::NAN);
    let r = &eval.report;
    println!(
        "best epoch {}/{}: val_loss={:.4} precision={:.4} recall={:.4} f1={:.4} accuracy={:.4} (threshold {})",
        outcome.best_epoch,
        outcome.log.epochs.len(),
        best,
        r.precision,
        r.recall,
        r.f1,
        r.accuracy,
        DEFAULT_THRESHOLD
    );
    Ok(())
}

fn write_report(dir: &Path, label: &str, report: &MetricsReport) -> Result<()> {
    metrics::save_reports(dir.join("report.csv"), std::slice::from_ref(report))?;
    fs::write(
        dir.join("confusion.txt"),
        format!(
            "{label}\n{}\n",
            metrics::format_confusion(&report.confusion)
        ),
    )?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let scope: Scope = a.scope.parse()?;
    if !a.threshold.is_finite() {
        return Err(Error::InvalidArgument("threshold must be finite".into()));
    }
    let model = load_model(&a.checkpoint)?;
    let split = load_split(&a.split)?;
    let source = Source::load(&a.source)?;
    check_source_matches(&model, &source)?;

    let pairs = trainer::protocol_pairs(
        &split,
        scope,
        a.pairs,
        a.pos_ratio,
        seed::derive_seed(a.seed, "eval"),
    )?;
    let eval = trainer::evaluate_model(&model, source.input(), &pairs, a.threshold)?;
    let species = data::scoped_groups(&split, Partition::Test, scope).len();
    let label = match scope {
        Scope::Unseen => format!("{species} species (Zero-Shot)"),
        Scope::All => format!("{species} species (ALL)"),
        Scope::Seen => format!("{species} species (seen)"),
    };

    fs::create_dir_all(&a.out_dir)?;
    save_pairs(a.out_dir.join("pairs.csv"), &pairs)?;
    write_report(&a.out_dir, &label, &eval.report)?;
    print!(
        "{}",
        metrics::format_table(
            std::slice::from_ref(&label),
            std::slice::from_ref(&eval.report)
        )
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let grid = metrics::parse_grid(&a.grid)?;
    let model = load_model(&a.checkpoint)?;
    let pairs = load_pairs(&a.pairs).map_err(|e| with_path(&a.pairs, e))?;
    let source = Source::load(&a.source)?;
    check_source_matches(&model, &source)?;

    let scores = trainer::score_pairs(&model, source.input(), &pairs)?;
    let labels: Vec<PairLabel> = pairs.iter().map(|p| p.label).collect();
    let reports = metrics::threshold_sweep(&labels, &scores, &grid)?;
    metrics::save_reports(&a.out, &reports)?;
    let names: Vec<String> = reports
        .iter()
        .map(|r| format!("{:.2}", r.threshold))
        .collect();
    print!("{}", metrics::format_table(&names, &reports));
    Ok(())
}

fn cmd_pairmatrix(a: PairMatrixArgs) -> Result<()> {
    let scope: Scope = a.scope.parse()?;
    let model = load_model(&a.checkpoint)?;
    let split = load_split(&a.split)?;
    let source = Source::load(&a.source)?;
    check_source_matches(&model, &source)?;

    let groups = trainer::test_groups(&split);
    let rows = if a.rows.is_empty() {
        let names: Vec<String> = data::scoped_groups(&split, Partition::Test, scope)
            .into_keys()
            .collect();
        if names.len() < a.num_species {
            return Err(Error::InvalidArgument(format!(
                "{scope} scope has {} test species, {} requested",
                names.len(),
                a.num_species
            )));
        }
        let mut rng = seed::rng_for(a.seed, "pairmatrix/species");
        metrics::choose_species(&names, a.num_species, &mut rng)
    } else {
        a.rows.clone()
    };
    let cols = if a.cols.is_empty() {
        rows.clone()
    } else {
        a.cols.clone()
    };
    let matrix = metrics::pair_f1_matrix(
        &groups,
        &rows,
        &cols,
        a.pairs_per_cell,
        a.threshold,
        a.seed,
        |pairs| trainer::score_pairs(&model, source.input(), pairs),
    )?;
    matrix.save(&a.out)?;
    print!(
        "{}",
        matrix
            .to_csv()
            .lines()
            .take_while(|l| !l.starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect::<String>()
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_seen_species: a.seen,
        n_unseen_species: a.unseen,
        samples_per_species: a.samples,
        resolution: a.resolution,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let out = synth_generate(&cfg, &a.out)?;
    println!(
        "wrote {} samples of {} species to {} (manifest {}, unseen list {})",
        out.samples,
        out.species.len(),
        a.out.display(),
        out.manifest.display(),
        out.unseen_list.display()
    );
    Ok(())
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let source = Source::load(&a.source)?;
    check_source_matches(&model, &source)?;
    let all_ids: Vec<String> = match &source {
        Source::Images(d) => d.samples().iter().map(|s| s.id.clone()).collect(),
        Source::Features(s) => s.ids().to_vec(),
    };
    let ids: Vec<String> = match (&a.split, &a.partition) {
        (Some(p), Some(part)) => {
            let part: Partition = part.parse()?;
            load_split(p)?.ids(part).map(str::to_string).collect()
        }
        _ => all_ids,
    };
    let emb = trainer::embed_ids(&model, source.input(), ids.iter().map(String::as_str))?;
    let mut store = EmbeddingStore::new(siamese_zsl::network::EMBEDDING_DIM);
    for id in &ids {
        store.insert(id.clone(), &emb[id])?;
    }
    store.save(&a.out)?;
    println!("wrote {} embeddings to {}", store.len(), a.out.display());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let cfg = GradCheckConfig {
        seeds: a.seeds,
        coords_per_tensor: a.coords,
    };
    let outcomes = gradcheck::run_suite(&cfg)?;
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed()).collect();
    for o in &outcomes {
        if a.verbose || !o.passed() {
            println!("{o}");
        }
    }
    if failed.is_empty() {
        println!("all checks passed ({} checks)", outcomes.len());
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{} of {} gradient checks failed",
            failed.len(),
            outcomes.len()
        )))
    }
}
