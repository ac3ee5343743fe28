//! `recprep` — single entry point wiring the pipeline stages together with
//! reproducible configuration.
//!
//! Subcommands: `ingest`, `build`, `augment`, `predict`, `eval`, `stats`.
//! Every stage writes a `run.json` manifest (resolved config, input digests,
//! tool version) next to its outputs. Exit codes: 2 missing input, 3 parse
//! error, 4 configuration error, 5 evaluation-join error, 1 anything else.

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use recprep_core::adapters::{popularity_counts, run_adapter, AdapterKind};
use recprep_core::augment::{augment_dataset, AugmentationSpec, Strategy, DEFAULT_COPIES_PER_SAMPLE};
use recprep_core::builder::{build_datasets, BuildConfig};
use recprep_core::error::{Error, Result};
use recprep_core::eval::{evaluate, read_predictions, write_diagnostics, write_predictions, EvalOptions};
use recprep_core::ingest::{ingest_dir, Catalog, DEFAULT_MIN_ACTIONS};
use recprep_core::sequence::{DEFAULT_MAX_HISTORY, DEFAULT_N_NEG};
use recprep_core::template::{read_dataset_file, write_dataset, ContentKey, InstructionSample, LIST_SEP};

/*========================== configuration ==========================*/

/// Values shared across subcommands; a `--config` JSON file provides them,
/// command-line flags override file values, and the built-in defaults match
/// the reference setup (history 20, 9 negatives, 5-action filter, 1000 eval
/// samples).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    raw_dir: PathBuf,
    work_dir: PathBuf,
    global_seed: u64,
    max_history: usize,
    n_neg: usize,
    min_actions: u32,
    fixpoint: bool,
    /// Test ids evaluated per run; 0 means the full set.
    eval_sample_size: usize,
    augmentation: Option<AugmentSpecFile>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            raw_dir: PathBuf::from("data/ml-1m"),
            work_dir: PathBuf::from("work"),
            global_seed: 42,
            max_history: DEFAULT_MAX_HISTORY,
            n_neg: DEFAULT_N_NEG,
            min_actions: DEFAULT_MIN_ACTIONS,
            fixpoint: false,
            eval_sample_size: 1000,
            augmentation: None,
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let data =
                    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
                serde_json::from_slice(&data)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            }
        }
    }
}

/// The CLI-facing augmentation spec file: a single strategy name plus its
/// parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AugmentSpecFile {
    strategy: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ks: Vec<u32>,
    #[serde(default)]
    full: bool,
    copies_per_sample: Option<u32>,
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    maskable_keys: Option<Vec<String>>,
}

fn strategy_from_parts(name: &str, ks: &[u32], full: bool) -> Result<Strategy> {
    match name {
        "shuffle-candidates" => Ok(Strategy::ShuffleCandidates),
        "shuffle-output" => Ok(Strategy::ShuffleOutput { full }),
        "shuffle-kv" => Ok(Strategy::ShuffleKv),
        "mask" => match ks {
            [] => Err(Error::Config("mask strategy needs at least one --k".into())),
            [k] => Ok(Strategy::Mask { k: *k }),
            many => Ok(Strategy::MaskMulti { ks: many.to_vec() }),
        },
        other => Err(Error::Config(format!(
            "unknown strategy '{other}' (expected shuffle-candidates, shuffle-output, \
             shuffle-kv, or mask)"
        ))),
    }
}

/*============================== args ==============================*/

#[derive(Parser)]
#[command(
    name = "recprep",
    version,
    about = "Turn multi-key-value interaction logs into instruction-tuning datasets and score ranked-list predictions"
)]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (0 = rayon default). Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse users.dat / movies.dat / ratings.dat into a catalog JSON.
    Ingest(IngestArgs),
    /// Build splits and the train/test instruction datasets from a catalog.
    Build(BuildArgs),
    /// Apply a shuffle or mask strategy to a dataset at a fixed ratio.
    Augment(AugmentArgs),
    /// Generate predictions with a built-in adapter.
    Predict(PredictArgs),
    /// Score a predictions file against a dataset.
    Eval(EvalArgs),
    /// Summarize a catalog or dataset file.
    Stats(StatsArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    raw_dir: Option<PathBuf>,
    /// Output catalog path (default: <work_dir>/catalog.json).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    min_actions: Option<u32>,
    /// Iterate the activity filter to a fixpoint instead of one pass.
    #[arg(long)]
    fixpoint: bool,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Output directory (default: <work_dir>/build).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_history: Option<usize>,
    #[arg(long)]
    n_neg: Option<usize>,
    /// Emit only instruction/input/output fields (no ids or meta).
    #[arg(long)]
    strip_meta: bool,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// shuffle-candidates | shuffle-output | shuffle-kv | mask
    #[arg(long)]
    strategy: Option<String>,
    /// Mask degree; repeat for a multi-degree mask (e.g. --k 3 --k 4).
    #[arg(long = "k")]
    ks: Vec<u32>,
    #[arg(long)]
    copies: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Shuffle the whole output list instead of keeping the positive first.
    #[arg(long)]
    full_output_shuffle: bool,
    /// Comma-separated override of which keys may be masked.
    #[arg(long)]
    maskable_keys: Option<String>,
    /// Augmentation spec file (JSON); flags override its values.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    strip_meta: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// oracle | identity | random | popularity
    #[arg(long)]
    kind: String,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Catalog JSON; required by the popularity adapter for its counts.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Report JSON path; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-sample diagnostics path (line-delimited JSON).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Evaluate this many sampled test ids (0 = all). Defaults to the
    /// config's eval_sample_size (1000).
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Annotate invalid entries with candidates within this edit distance
    /// (diagnostics only; never affects metrics).
    #[arg(long)]
    levenshtein: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

/*============================ manifests ============================*/

fn sha256_hex(path: &Path) -> Result<String> {
    let data = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&data);
    Ok(format!("{:x}", hasher.finalize()))
}

fn write_run_manifest(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    inputs: &[&Path],
    outputs: &[&str],
) -> Result<()> {
    let mut digests = BTreeMap::new();
    for input in inputs {
        digests.insert(
            input.display().to_string(),
            format!("sha256:{}", sha256_hex(input)?),
        );
    }
    let manifest = json!({
        "tool": "recprep",
        "version": recprep_core::VERSION,
        "command": command,
        "config": config,
        "inputs": digests,
        "outputs": outputs,
    });
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_parent(path: &Path) -> Result<PathBuf> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(dir.to_path_buf())
}

/*============================ commands ============================*/

fn cmd_ingest(cfg: &RunConfig, args: &IngestArgs) -> Result<()> {
    let raw_dir = args.raw_dir.clone().unwrap_or_else(|| cfg.raw_dir.clone());
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.work_dir.join("catalog.json"));
    let min_actions = args.min_actions.unwrap_or(cfg.min_actions);
    let fixpoint = args.fixpoint || cfg.fixpoint;

    let out_dir = ensure_parent(&out)?;
    let catalog = ingest_dir(&raw_dir, min_actions, fixpoint)?;
    catalog.write_json(&out)?;
    write_run_manifest(
        &out_dir,
        "ingest",
        json!({
            "raw_dir": raw_dir,
            "min_actions": min_actions,
            "fixpoint": fixpoint,
        }),
        &[
            &raw_dir.join("users.dat"),
            &raw_dir.join("movies.dat"),
            &raw_dir.join("ratings.dat"),
        ],
        &["catalog.json"],
    )?;
    eprintln!(
        "ingest: {} users, {} items, {} events kept ({} before filter) -> {}",
        catalog.users.len(),
        catalog.items.len(),
        catalog.filter.events_after,
        catalog.filter.events_before,
        out.display()
    );
    Ok(())
}

fn cmd_build(cfg: &RunConfig, args: &BuildArgs) -> Result<()> {
    let catalog_path = args
        .catalog
        .clone()
        .unwrap_or_else(|| cfg.work_dir.join("catalog.json"));
    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| cfg.work_dir.join("build"));
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let build_cfg = BuildConfig {
        global_seed: args.seed.unwrap_or(cfg.global_seed),
        max_history: args.max_history.unwrap_or(cfg.max_history),
        n_neg: args.n_neg.unwrap_or(cfg.n_neg),
    };
    let catalog = Catalog::read_json(&catalog_path)?;
    let output = build_datasets(&catalog, &build_cfg)?;

    output.splits.write_json(&out_dir.join("splits.json"))?;
    let n_train = write_dataset(&output.train, &out_dir.join("train.jsonl"), args.strip_meta)?;
    let n_test = write_dataset(&output.test, &out_dir.join("test.jsonl"), args.strip_meta)?;
    write_run_manifest(
        &out_dir,
        "build",
        json!({
            "catalog": catalog_path,
            "global_seed": build_cfg.global_seed,
            "max_history": build_cfg.max_history,
            "n_neg": build_cfg.n_neg,
            "strip_meta": args.strip_meta,
        }),
        &[&catalog_path],
        &["splits.json", "train.jsonl", "test.jsonl"],
    )?;
    if !output.splits.dropped.is_empty() {
        eprintln!(
            "build: dropped {} user(s) with sequences shorter than 3",
            output.splits.dropped.len()
        );
    }
    eprintln!(
        "build: {n_train} train + {n_test} test samples -> {}",
        out_dir.display()
    );
    Ok(())
}

fn resolve_augment_spec(cfg: &RunConfig, args: &AugmentArgs) -> Result<AugmentationSpec> {
    let file_spec: Option<AugmentSpecFile> = match &args.spec {
        Some(path) => {
            let data = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
            Some(
                serde_json::from_slice(&data)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            )
        }
        None => cfg.augmentation.clone(),
    };

    let strategy_name = args
        .strategy
        .clone()
        .or_else(|| file_spec.as_ref().map(|s| s.strategy.clone()))
        .ok_or_else(|| Error::Config("no strategy given (use --strategy or --spec)".into()))?;
    let ks: Vec<u32> = if args.ks.is_empty() {
        file_spec.as_ref().map(|s| s.ks.clone()).unwrap_or_default()
    } else {
        args.ks.clone()
    };
    let full = args.full_output_shuffle || file_spec.as_ref().is_some_and(|s| s.full);
    let strategy = strategy_from_parts(&strategy_name, &ks, full)?;

    let copies = args
        .copies
        .or(file_spec.as_ref().and_then(|s| s.copies_per_sample))
        .unwrap_or(DEFAULT_COPIES_PER_SAMPLE);
    let seed = args
        .seed
        .or(file_spec.as_ref().and_then(|s| s.seed))
        .unwrap_or(cfg.global_seed);
    let maskable_keys = args
        .maskable_keys
        .as_ref()
        .map(|s| s.split(',').map(|k| k.trim().to_string()).collect())
        .or_else(|| file_spec.as_ref().and_then(|s| s.maskable_keys.clone()));

    Ok(AugmentationSpec {
        strategies: vec![strategy],
        copies_per_sample: copies,
        seed,
        maskable_keys,
        allow_combinations: false,
    })
}

fn cmd_augment(cfg: &RunConfig, args: &AugmentArgs) -> Result<()> {
    let spec = resolve_augment_spec(cfg, args)?;
    let samples = read_dataset_file(&args.input)?;
    let augmented = augment_dataset(&samples, &spec)?;
    let out_dir = ensure_parent(&args.out)?;
    let n = write_dataset(&augmented, &args.out, args.strip_meta)?;
    write_run_manifest(
        &out_dir,
        "augment",
        json!({
            "input": args.input,
            "spec": spec,
            "strip_meta": args.strip_meta,
        }),
        &[&args.input],
        &[args.out.file_name().and_then(|n| n.to_str()).unwrap_or("out")],
    )?;
    eprintln!(
        "augment: {} originals -> {n} samples ({}) -> {}",
        samples.len(),
        spec.strategies[0].label(),
        args.out.display()
    );
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, args: &PredictArgs) -> Result<()> {
    let dataset = read_dataset_file(&args.dataset)?;
    let kind = match args.kind.as_str() {
        "oracle" => AdapterKind::Oracle,
        "identity" => AdapterKind::Identity,
        "random" => AdapterKind::Random {
            seed: args.seed.unwrap_or(cfg.global_seed),
        },
        "popularity" => {
            let catalog_path = args.catalog.clone().ok_or_else(|| {
                Error::Config("popularity adapter needs --catalog for its counts".into())
            })?;
            let catalog = Catalog::read_json(&catalog_path)?;
            AdapterKind::Popularity {
                counts: popularity_counts(&catalog),
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown adapter '{other}' (expected oracle, identity, random, or popularity)"
            )))
        }
    };
    let predictions = run_adapter(&kind, &dataset)?;
    let out_dir = ensure_parent(&args.out)?;
    let n = write_predictions(&predictions, &args.out)?;
    let mut inputs: Vec<&Path> = vec![&args.dataset];
    if let Some(c) = &args.catalog {
        inputs.push(c);
    }
    write_run_manifest(
        &out_dir,
        "predict",
        json!({
            "kind": args.kind,
            "dataset": args.dataset,
            "seed": args.seed.unwrap_or(cfg.global_seed),
            "catalog": args.catalog,
        }),
        &inputs,
        &[args.out.file_name().and_then(|n| n.to_str()).unwrap_or("out")],
    )?;
    eprintln!("predict: {n} predictions ({}) -> {}", kind.name(), args.out.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    let predictions = read_predictions(&args.predictions)?;
    let dataset = read_dataset_file(&args.dataset)?;
    let sample_size = match args.sample.unwrap_or(cfg.eval_sample_size) {
        0 => None,
        n => Some(n),
    };
    let opts = EvalOptions {
        sample_size,
        seed: args.seed.unwrap_or(cfg.global_seed),
        levenshtein: args.levenshtein,
    };
    let (report, diagnostics) = evaluate(&predictions, &dataset, &opts)?;
    print!("{}", report.render_table());
    if let Some(out) = &args.out {
        let out_dir = ensure_parent(out)?;
        report.write_json(out)?;
        write_run_manifest(
            &out_dir,
            "eval",
            json!({
                "predictions": args.predictions,
                "dataset": args.dataset,
                "sample": sample_size,
                "seed": opts.seed,
                "levenshtein": opts.levenshtein,
            }),
            &[&args.predictions, &args.dataset],
            &[out.file_name().and_then(|n| n.to_str()).unwrap_or("report.json")],
        )?;
    }
    if let Some(path) = &args.diagnostics {
        ensure_parent(path)?;
        write_diagnostics(&diagnostics, path)?;
    }
    Ok(())
}

/*============================== stats ==============================*/

fn histogram_buckets(values: impl Iterator<Item = usize>) -> BTreeMap<String, usize> {
    let mut buckets: BTreeMap<String, usize> = BTreeMap::new();
    for v in values {
        let bucket = match v {
            0..=4 => "0-4",
            5..=9 => "5-9",
            10..=19 => "10-19",
            20..=49 => "20-49",
            50..=99 => "50-99",
            _ => "100+",
        };
        *buckets.entry(bucket.to_string()).or_default() += 1;
    }
    buckets
}

fn catalog_stats(catalog: &Catalog) -> serde_json::Value {
    let mut per_user: BTreeMap<u32, usize> = BTreeMap::new();
    let mut ratings: BTreeMap<u8, usize> = BTreeMap::new();
    for e in &catalog.events {
        *per_user.entry(e.user_id).or_default() += 1;
        *ratings.entry(e.rating).or_default() += 1;
    }
    let lens: Vec<usize> = per_user.values().copied().collect();
    let mean = if lens.is_empty() {
        0.0
    } else {
        lens.iter().sum::<usize>() as f64 / lens.len() as f64
    };
    json!({
        "users": catalog.users.len(),
        "items": catalog.items.len(),
        "events": catalog.events.len(),
        "filter": catalog.filter,
        "rating_histogram": ratings,
        "events_per_user": {
            "min": lens.iter().min().copied().unwrap_or(0),
            "mean": mean,
            "max": lens.iter().max().copied().unwrap_or(0),
        },
        "sequence_length_histogram": histogram_buckets(lens.into_iter()),
    })
}

fn dataset_stats(samples: &[InstructionSample]) -> serde_json::Value {
    let history_key = ContentKey::HistoryTitles.display();
    let mut key_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut history_lens: Vec<usize> = Vec::with_capacity(samples.len());
    let mut candidate_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut augmented = 0usize;
    let mut positive_first = 0usize;
    for s in samples {
        for e in &s.input_kv.entries {
            *key_counts.entry(e.key.clone()).or_default() += 1;
        }
        if let Some(h) = s.input_kv.get(history_key) {
            history_lens.push(h.split(LIST_SEP).count());
        }
        *candidate_counts.entry(s.candidates.len()).or_default() += 1;
        augmented += usize::from(s.lineage.is_some());
        positive_first += usize::from(s.output.first() == Some(&s.positive_title));
    }
    json!({
        "samples": samples.len(),
        "augmented": augmented,
        "originals": samples.len() - augmented,
        "positive_first": positive_first,
        "key_counts": key_counts,
        "candidates_per_sample": candidate_counts,
        "history_length_histogram": histogram_buckets(history_lens.into_iter()),
    })
}

fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let value = match (&args.catalog, &args.dataset) {
        (Some(path), None) => catalog_stats(&Catalog::read_json(path)?),
        (None, Some(path)) => dataset_stats(&read_dataset_file(path)?),
        _ => {
            return Err(Error::Config(
                "stats needs exactly one of --catalog or --dataset".into(),
            ))
        }
    };
    println!("{}", serde_json::to_string_pretty(&value).expect("stats serialize"));
    Ok(())
}

/*============================== main ==============================*/

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => 2,
        Error::Parse { .. } | Error::Decode(_) => 3,
        Error::Config(_) => 4,
        Error::Evaluation(_) => 5,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Ingest(args) => cmd_ingest(&cfg, args),
        Command::Build(args) => cmd_build(&cfg, args),
        Command::Augment(args) => cmd_augment(&cfg, args),
        Command::Predict(args) => cmd_predict(&cfg, args),
        Command::Eval(args) => cmd_eval(&cfg, args),
        Command::Stats(args) => cmd_stats(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; everything else is a usage
            // problem and maps to the config exit code.
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(exit_code_for(&e))
        }
    }
}
