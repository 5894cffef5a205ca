//! `ethfraud`: one subcommand per pipeline stage, from fetching
//! transactions to the final Markdown report.

mod manifest;
mod report;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ethfraud_core::dataset::stratified_split;
use ethfraud_core::eval::{
    self, confusion, grid_search, metrics, rf_reference_grid, select_config, svm_reference_grid,
    validate_grid, write_confusion_csv, write_grid_csv, xgb_reference_grid, Criterion, Metrics,
};
use ethfraud_core::features::{build_feature_table, write_skip_report};
use ethfraud_core::ingest::{
    load_address_list, load_labels, load_transactions_file, write_transactions_file, ClientConfig,
    EtherscanClient,
};
use ethfraud_core::model::ModelFile;
use ethfraud_core::sensitivity::{ablate, rank_features, write_ablation_csv, ImportanceReport};
use ethfraud_core::synth::{generate_corpus, SynthParams};
use ethfraud_core::{Dataset, ModelConfig, ModelFamily};

use manifest::Recorder;

#[derive(Parser)]
#[command(
    name = "ethfraud",
    version,
    about = "Fraudulent-account detection pipeline"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download transaction histories from an Etherscan-compatible API.
    Fetch(FetchArgs),
    /// Aggregate transactions into the per-account feature table.
    Featurize(FeaturizeArgs),
    /// Stratified train/validation split of a feature table.
    Split(SplitArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Cross-validated grid search.
    GridSearch(GridArgs),
    /// Score a saved model on a feature table.
    Evaluate(EvaluateArgs),
    /// Rank features by a saved model's importance.
    Importance(ImportanceArgs),
    /// Re-train without the top-ranked features.
    Ablate(AblateArgs),
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Merge result CSVs into a Markdown summary.
    Report(ReportArgs),
}

#[derive(Args)]
struct FetchArgs {
    /// One address per line.
    #[arg(long)]
    addresses: PathBuf,
    #[arg(long, default_value = "https://api.etherscan.io/api")]
    base_url: String,
    /// Maximum requests per second.
    #[arg(long, default_value_t = 5.0)]
    rate: f64,
    /// Transaction CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    tx: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Addresses to leave out (one per line).
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// Feature CSV to write; skipped accounts go to `<stem>.skipped.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for train.csv and validation.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: ModelFamily,
    /// JSON object of hyperparameters; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    /// Standardize features before fitting (required for svm).
    #[arg(long)]
    standardize: bool,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Model JSON to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    model: ModelFamily,
    /// JSON array of configuration objects, or `reference` for the
    /// built-in grid of the model family.
    #[arg(long)]
    grid: String,
    /// Base configuration the reference grid is built on.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    train: PathBuf,
    /// Also score every configuration trained on all of `--train`.
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Fold assignment seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Non-fraud probability cutoff; defaults to the model's own.
    #[arg(long)]
    cutoff: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportanceArgs {
    #[arg(long)]
    model_file: PathBuf,
    /// Importance CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    model: ModelFamily,
    /// Comma-separated counts of top-ranked features to drop.
    #[arg(long, value_delimiter = ',', required = true)]
    exclude_top: Vec<usize>,
    #[arg(long)]
    importance: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Ablation CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON object of generator parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_nonfraud: Option<usize>,
    #[arg(long)]
    n_fraud: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for tx.csv, labels.csv and accounts.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Result CSVs, one table each, in the given order.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Markdown file to write.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    set_threads(cli.threads)?;
    let t = cli.threads;
    match cli.command {
        Command::Fetch(a) => fetch(a, t),
        Command::Featurize(a) => featurize(a, t),
        Command::Split(a) => split(a, t),
        Command::Train(a) => train(a, t),
        Command::GridSearch(a) => grid(a, t),
        Command::Evaluate(a) => evaluate(a, t),
        Command::Importance(a) => importance(a, t),
        Command::Ablate(a) => ablation(a, t),
        Command::Synth(a) => synth(a, t),
        Command::Report(a) => summarize(a, t),
    }
}

#[cfg(feature = "parallel")]
fn set_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn set_threads(n: Option<usize>) -> Result<()> {
    if n.is_some_and(|n| n != 1) {
        log::warn!("built without parallelism; --threads is ignored");
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let s = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read_csv(path).with_context(|| format!("loading {}", path.display()))
}

fn load_config(family: ModelFamily, path: Option<&Path>) -> Result<ModelConfig> {
    let v = match path {
        Some(p) => read_json(p)?,
        None => json!({}),
    };
    ModelConfig::from_json(family, v).with_context(|| match path {
        Some(p) => format!("configuration {}", p.display()),
        None => "default configuration".into(),
    })
}

fn fetch(a: FetchArgs, threads: Option<usize>) -> Result<()> {
    let rec = Recorder::start("fetch", threads);
    let addresses = load_address_list(&a.addresses)?;
    let mut cfg = ClientConfig::from_env(a.base_url.clone())?;
    cfg.max_requests_per_second = a.rate;
    let client = EtherscanClient::new(cfg)?;
    let results = client.fetch_many(&addresses);
    let mut txs = Vec::new();
    let mut seen = BTreeSet::new();
    let mut failures = Vec::new();
    for (address, r) in addresses.iter().zip(results) {
        match r {
            Ok(list) => txs.extend(list.into_iter().filter(|t| seen.insert(t.tx_hash.clone()))),
            Err(e) => failures.push(format!("{address}: {e}")),
        }
    }
    txs.sort_by(|x, y| (x.timestamp, &x.tx_hash).cmp(&(y.timestamp, &y.tx_hash)));
    write_transactions_file(&a.out, &txs)?;
    rec.finish(
        &manifest::beside(&a.out),
        json!({ "base_url": a.base_url, "rate": a.rate, "failures": failures }),
        None,
        vec![a.addresses],
        vec![a.out],
    )?;
    if !failures.is_empty() {
        bail!(
            "{} of {} addresses failed; first: {}",
            failures.len(),
            addresses.len(),
            failures[0]
        );
    }
    Ok(())
}

fn featurize(a: FeaturizeArgs, threads: Option<usize>) -> Result<()> {
    let rec = Recorder::start("featurize", threads);
    let txs =
        load_transactions_file(&a.tx).with_context(|| format!("loading {}", a.tx.display()))?;
    let labels =
        load_labels(&a.labels).with_context(|| format!("loading {}", a.labels.display()))?;
    let exclude: BTreeSet<String> = match &a.exclude {
        Some(p) => load_address_list(p)?.into_iter().collect(),
        None => BTreeSet::new(),
    };
    let (table, skipped) = build_feature_table(&txs, &labels, &exclude)?;
    table.write_csv(&a.out)?;
    let skip_path = a.out.with_extension("skipped.csv");
    write_skip_report(&skip_path, &skipped)?;
    if !skipped.is_empty() {
        log::warn!(
            "{} accounts skipped; see {}",
            skipped.len(),
            skip_path.display()
        );
    }
    let mut inputs = vec![a.tx, a.labels];
    inputs.extend(a.exclude);
    rec.finish(
        &manifest::beside(&a.out),
        json!({ "rows": table.len(), "skipped": skipped.len() }),
        None,
        inputs,
        vec![a.out, skip_path],
    )?;
    Ok(())
}

fn split(a: SplitArgs, threads: Option<usize>) -> Result<()> {
    let rec = Recorder::start("split", threads);
    let d = read_dataset(&a.data)?;
    let (train, val) = stratified_split(&d, a.train_fraction, a.seed)?;
    create_dir(&a.out)?;
    let (tp, vp) = (a.out.join("train.csv"), a.out.join("validation.csv"));
    train.write_csv(&tp)?;
    val.write_csv(&vp)?;
    rec.finish(
        &manifest::inside(&a.out),
        json!({ "train_fraction": a.train_fraction }),
        Some(a.seed),
        vec![a.data],
        vec![tp, vp],
    )?;
    Ok(())
}

fn train(a: TrainArgs, threads: Option<usize>) -> Result<()> {
    let rec = Recorder::start("train", threads);
    match (a.model, a.standardize) {
        (ModelFamily::Svm, false) => {
            bail!("SVM requires standardized features; pass --standardize")
        }
        (ModelFamily::Rf | ModelFamily::Xgb, true) => {
            bail!("--standardize applies to svm only; tree models use raw features")
        }
        _ => {}
    }
    let mut config = load_config(a.model, a.config.as_deref())?;
    if let Some(s) = a.seed {
        config = config.with_seed(s);
    }
    let d = read_dataset(&a.train)?;
    let model = config.train(&d).context("training")?;
    ModelFile::save(&model, &a.out)?;
    let mut inputs = vec![a.train];
    inputs.extend(a.config);
    rec.finish(
        &manifest::beside(&a.out),
        serde_json::to_value(&config)?,
        config.seed(),
        inputs,
        vec![a.out],
    )?;
    Ok(())
}

fn grid(a: GridArgs, threads: Option<usize>) -> Result<()> {
    let rec = Recorder::start("grid-search", threads);
    let configs: Vec<ModelConfig> = if a.grid == "reference" {
        match load_config(a.model, a.config.as_deref())? {
            ModelConfig::Rf(p) => rf_reference_grid(&p),
            ModelConfig::Xgb(p) => xgb_reference_grid(&p),
            ModelConfig::Svm(p) => svm_reference_grid(&p),
        }
    } else {
        if a.config.is_some() {
            bail!("--config only applies with --grid reference");
        }
        let path = Path::new(&a.grid);
        let serde_json::Value::Array(items) = read_json(path)? else {
            bail!("{}: grid must be a JSON array", path.display());
        };
        items
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                ModelConfig::from_json(a.model, v).with_context(|| format!("grid entry {}", i + 1))
            })
            .collect::<Result<_>>()?
    };
    let d = read_dataset(&a.train)?;
    let cv = grid_search(&configs, &d, a.folds, a.seed)?;
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    let cv_csv = a.out.join("cv.csv");
    write_grid_csv(&cv_csv, &cv)?;
    outputs.push(cv_csv);

    let mut selected = serde_json::Map::new();
    for criterion in [Criterion::MaxRecall, Criterion::MinFpr, Criterion::MaxF1] {
        let Ok(i) = select_config(&cv, criterion) else {
            log::warn!("no configuration defines {criterion}");
            continue;
        };
        let ev = cv.rows[i]
            .outcome
            .as_ref()
            .expect("selected rows succeeded");
        let cm_path = a.out.join(format!("confusion_{criterion}.csv"));
        write_confusion_csv(&cm_path, &ev.pooled)?;
        outputs.push(cm_path);
        selected.insert(
            criterion.to_string(),
            json!({ "conf": i + 1, "config": cv.rows[i].config, "mean": ev.mean }),
        );
    }
    let sel_path = a.out.join("selected.json");
    write_json(&sel_path, &selected)?;
    outputs.push(sel_path);

    let full_path = a.out.join("grid.json");
    write_json(&full_path, &cv)?;
    outputs.push(full_path);

    let mut inputs = vec![a.train];
    if let Some(vp) = &a.validation {
        let val = read_dataset(vp)?;
        let vr = validate_grid(&configs, &d, &val)?;
        let path = a.out.join("validation.csv");
        write_grid_csv(&path, &vr)?;
        outputs.push(path);
        inputs.push(vp.clone());
    }
    if a.grid != "reference" {
        inputs.push(PathBuf::from(&a.grid));
    }
    inputs.extend(a.config);
    let failed = cv.rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        log::warn!("{failed} configurations failed; see the error column of cv.csv");
    }
    rec.finish(
        &manifest::inside(&a.out),
        json!({ "folds": a.folds, "grid": configs }),
        Some(a.seed),
        inputs,
        outputs,
    )?;
    Ok(())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn evaluate(a: EvaluateArgs, threads: Option<usize>) -> Result<()> {
    let rec = Recorder::start("evaluate", threads);
    let model = ModelFile::load(&a.model_file)
        .with_context(|| format!("loading {}", a.model_file.display()))?;
    let d = read_dataset(&a.data)?;
    let predicted = model.predict(&d, a.cutoff)?;
    let proba = model.predict_proba(&d);
    let cm = confusion(&predicted, d.labels())?;
    let m = metrics(&cm);
    create_dir(&a.out)?;

    let pred_path = a.out.join("predictions.csv");
    let mut w = csv::Writer::from_path(&pred_path)?;
    w.write_record(["address", "label", "predicted", "p_nonfraud"])?;
    for i in 0..d.len() {
        let p = proba.as_ref().map(|p| p[i].to_string()).unwrap_or_default();
        w.write_record([
            d.addresses()[i].as_str(),
            d.label(i).as_str(),
            predicted[i].as_str(),
            p.as_str(),
        ])?;
    }
    w.flush()?;

    let metrics_path = a.out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&metrics_path)?;
    w.write_record(Metrics::NAMES)?;
    w.write_record(m.values().map(eval::fmt_pct))?;
    w.flush()?;

    let cm_path = a.out.join("confusion.csv");
    write_confusion_csv(&cm_path, &cm)?;
    let cutoff = a.cutoff.or(model.default_cutoff());
    rec.finish(
        &manifest::inside(&a.out),
        json!({ "model_type": model.family(), "cutoff": cutoff }),
        None,
        vec![a.model_file, a.data],
        vec![pred_path, metrics_path, cm_path],
    )?;
    Ok(())
}

fn importance(a: ImportanceArgs, threads: Option<usize>) -> Result<()> {
    let rec = Recorder::start("importance", threads);
    let model = ModelFile::load(&a.model_file)
        .with_context(|| format!("loading {}", a.model_file.display()))?;
    let report = rank_features(&model)?;
    report.write_csv(&a.out)?;
    rec.finish(
        &manifest::beside(&a.out),
        json!({ "model_type": model.family() }),
        None,
        vec![a.model_file],
        vec![a.out],
    )?;
    Ok(())
}

fn ablation(a: AblateArgs, threads: Option<usize>) -> Result<()> {
    let rec = Recorder::start("ablate", threads);
    if a.model == ModelFamily::Svm {
        bail!("ablation needs an importance ranking, which svm models do not have");
    }
    let mut config = load_config(a.model, a.config.as_deref())?;
    if let Some(s) = a.seed {
        config = config.with_seed(s);
    }
    let report = ImportanceReport::read_csv(&a.importance, a.model)
        .with_context(|| format!("loading {}", a.importance.display()))?;
    let train = read_dataset(&a.train)?;
    let val = read_dataset(&a.validation)?;
    let rows = a
        .exclude_top
        .iter()
        .map(|&n| {
            ablate(&train, &val, &config, &report, n).with_context(|| format!("excluding top {n}"))
        })
        .collect::<Result<Vec<_>>>()?;
    write_ablation_csv(&a.out, &rows)?;
    let mut inputs = vec![a.importance, a.train, a.validation];
    inputs.extend(a.config);
    rec.finish(
        &manifest::beside(&a.out),
        json!({ "config": config, "exclude_top": a.exclude_top }),
        config.seed(),
        inputs,
        vec![a.out],
    )?;
    Ok(())
}

fn synth(a: SynthArgs, threads: Option<usize>) -> Result<()> {
    let rec = Recorder::start("synth", threads);
    let mut p: SynthParams = match &a.config {
        Some(path) => serde_json::from_value(read_json(path)?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => SynthParams::default(),
    };
    if let Some(n) = a.n_nonfraud {
        p.n_nonfraud = n;
    }
    if let Some(n) = a.n_fraud {
        p.n_fraud = n;
    }
    if let Some(s) = a.seed {
        p.seed = s;
    }
    let corpus = generate_corpus(&p)?;
    create_dir(&a.out)?;
    let tx_path = a.out.join("tx.csv");
    write_transactions_file(&tx_path, corpus.transactions())?;
    let labels_path = a.out.join("labels.csv");
    ethfraud_core::ingest::write_labels(&labels_path, &corpus.labels())?;
    let accounts_path = a.out.join("accounts.csv");
    let mut w = csv::Writer::from_path(&accounts_path)?;
    w.write_record(["address", "label", "blend", "posterior_fraud"])?;
    for acc in &corpus.accounts {
        w.write_record([
            acc.address.clone(),
            acc.label.as_str().to_string(),
            acc.blend.to_string(),
            p.posterior_fraud(acc.blend).to_string(),
        ])?;
    }
    w.flush()?;
    let mut inputs = Vec::new();
    inputs.extend(a.config);
    rec.finish(
        &manifest::inside(&a.out),
        serde_json::to_value(&p)?,
        Some(p.seed),
        inputs,
        vec![tx_path, labels_path, accounts_path],
    )?;
    Ok(())
}

fn summarize(a: ReportArgs, threads: Option<usize>) -> Result<()> {
    let rec = Recorder::start("report", threads);
    let md = report::render(&a.inputs)?;
    std::fs::write(&a.out, md).with_context(|| format!("writing {}", a.out.display()))?;
    rec.finish(
        &manifest::beside(&a.out),
        json!({}),
        None,
        a.inputs,
        vec![a.out],
    )?;
    Ok(())
}
