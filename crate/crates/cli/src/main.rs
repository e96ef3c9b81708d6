use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use netforensic::aggregate::{count_flows, deduplicate, drop_missing, srs_sample, AggregationSpec};
use netforensic::detector::{fit_baseline, score_batch, BandwidthPolicy, NormalBaseline, DEFAULT_MULTIPLIER};
use netforensic::eval::{
    default_multiplier_grid, evidence_report, format_evidence, percent, roc_from_scores, roc_to_csv, EvalReport,
};
use netforensic::ingest::{self, BadRowPolicy, CsvOptions};
use netforensic::pipeline::{
    derive_seed, fingerprint_indices, resolve_schema, run_experiment, scored_from_csv, scored_to_csv,
    split_train_test, ExperimentConfig, SAMPLE_STAGE, SPLIT_STAGE,
};
use netforensic::select::{score_features, scores_from_csv, scores_to_csv, select_top_k, DEFAULT_BINS};
use netforensic::snapshot::{is_snapshot, load_snapshot, save_snapshot};
use netforensic::Dataset;

/// Flow aggregation, chi-square feature ranking and correntropy-based
/// anomaly scoring over UNSW-NB15-style flow records.
#[derive(Parser)]
#[command(name = "netforensic", version)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load CSV files into a snapshot.
    Ingest(IngestArgs),
    /// Deduplicate, drop records with missing values and draw a random sample.
    Sample(SampleArgs),
    /// Count flows per key.
    Aggregate(AggregateArgs),
    /// Rank features by chi-square against the label.
    Select(SelectArgs),
    /// Split into train/test and fit the normal baseline on training normals.
    Fit(FitArgs),
    /// Score records against a fitted baseline.
    Score(ScoreArgs),
    /// Accuracy, false alarm rate, per-class accuracy and evidence report.
    Eval(EvalArgs),
    /// Detection/false-positive rates over a multiplier sweep.
    Roc(RocArgs),
    /// End-to-end experiment.
    Run(RunArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Snapshot or CSV file(s).
    #[arg(long, short, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Schema for CSV input: a built-in name (`unsw-nb15`) or `infer` from the header.
    #[arg(long, default_value = "unsw-nb15")]
    schema: String,
    /// CSV input has a header row (default: only with `--schema infer`).
    #[arg(long, conflicts_with = "no_header")]
    header: bool,
    #[arg(long)]
    no_header: bool,
    /// Abort on the first malformed row instead of skipping it.
    #[arg(long)]
    strict: bool,
}

impl InputArgs {
    fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            has_header: if self.header {
                true
            } else if self.no_header {
                false
            } else {
                self.schema == "infer"
            },
            on_bad_row: if self.strict { BadRowPolicy::Fail } else { BadRowPolicy::Skip },
        }
    }

    fn load(&self) -> Result<Dataset> {
        if self.input.iter().any(is_snapshot) {
            if self.input.len() != 1 {
                bail!("a snapshot must be the only input");
            }
            return Ok(load_snapshot(&self.input[0])?);
        }
        let schema = resolve_schema(&self.schema, self.input.first().map(PathBuf::as_path))?;
        let (dataset, stats) = ingest::load_csv_files(&self.input, &schema, self.csv_options())?;
        if stats.rows_dropped > 0 {
            warn_drops(&stats);
        }
        Ok(dataset)
    }
}

fn warn_drops(stats: &ingest::IngestStats) {
    for (reason, n) in &stats.drop_reasons {
        eprintln!("warning: dropped {n} rows ({reason})");
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Snapshot to write.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, short)]
    output: PathBuf,
    /// Sample size; omit to keep every cleaned record.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Keep duplicate records.
    #[arg(long)]
    no_dedup: bool,
}

#[derive(Args)]
struct AggregateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated key fields, e.g. `srcip,dstip`.
    #[arg(long)]
    keys: AggregationSpec,
    /// CSV of per-key flow counts.
    #[arg(long, short)]
    output: PathBuf,
    /// Rows to echo to stdout.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Ranked feature CSV.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 8)]
    top_k: usize,
}

#[derive(Args)]
struct BandwidthArgs {
    /// Fixed kernel bandwidth.
    #[arg(long, conflicts_with = "sigma_auto")]
    sigma: Option<f64>,
    /// Bandwidth from Silverman's rule (default).
    #[arg(long)]
    sigma_auto: bool,
}

impl BandwidthArgs {
    fn policy(&self) -> Option<BandwidthPolicy> {
        match (self.sigma, self.sigma_auto) {
            (Some(s), _) => Some(BandwidthPolicy::Fixed(s)),
            (None, true) => Some(BandwidthPolicy::Auto),
            (None, false) => None,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Baseline file to write.
    #[arg(long, short)]
    output: PathBuf,
    /// Snapshot receiving the test split.
    #[arg(long)]
    test_output: PathBuf,
    /// Ranked feature CSV from `select`; features are ranked here when omitted.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 8)]
    top_k: usize,
    #[command(flatten)]
    bandwidth: BandwidthArgs,
    #[arg(long, default_value_t = 0.6)]
    train_fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    baseline: PathBuf,
    /// Scored records CSV.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MULTIPLIER)]
    multiplier: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Scores CSV from `score`.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    /// Directory for report.txt, report.csv, roc.csv and evidence.txt.
    #[arg(long, short)]
    output: PathBuf,
    /// Sample size shown in the report (default: number of scored records).
    #[arg(long)]
    n: Option<usize>,
    /// Flows listed in the evidence report.
    #[arg(long, default_value_t = 20)]
    top: usize,
}

#[derive(Args)]
struct RocArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration; flags below override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// CSV input files.
    #[arg(long, short, num_args = 1..)]
    input: Vec<PathBuf>,
    /// `unsw-nb15` or `infer`.
    #[arg(long)]
    schema: Option<String>,
    #[arg(long, conflicts_with = "no_header")]
    header: bool,
    #[arg(long)]
    no_header: bool,
    /// Output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Experiment seed; sampling and splitting seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Sample sizes, one run each.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    n: Vec<usize>,
    /// Equal-frequency bins per feature for chi-square ranking.
    #[arg(long)]
    bins: Option<usize>,
    /// Number of top-ranked features fed to the detector.
    #[arg(long)]
    top_k: Option<usize>,
    #[command(flatten)]
    bandwidth: BandwidthArgs,
    /// Attack threshold in standard deviations of the baseline.
    #[arg(long)]
    multiplier: Option<f64>,
    /// Share of normal records used to fit the baseline.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Flows listed in each evidence report.
    #[arg(long)]
    evidence_top: Option<usize>,
    /// Keep duplicate records.
    #[arg(long)]
    no_dedup: bool,
}

fn ingest_cmd(a: IngestArgs) -> Result<()> {
    let dataset = a.input.load()?;
    let bytes = save_snapshot(&dataset, &a.output)?;
    let (normal, attack) = dataset.count_labels();
    println!(
        "{} records ({normal} normal, {attack} attack) -> {} ({bytes} bytes)",
        dataset.len(),
        a.output.display()
    );
    Ok(())
}

fn sample_cmd(a: SampleArgs) -> Result<()> {
    let dataset = a.input.load()?;
    let (deduped, dups) = if a.no_dedup { (dataset.clone(), 0) } else { deduplicate(&dataset) };
    let (cleaned, missing) = drop_missing(&deduped);
    let sample = match a.n {
        Some(n) => srs_sample(&cleaned, n, derive_seed(a.seed, SAMPLE_STAGE))?,
        None => cleaned,
    };
    save_snapshot(&sample, &a.output)?;
    println!(
        "{} records, {dups} duplicates and {missing} with missing values removed, sampled {} (seed {}) -> {}",
        dataset.len(),
        sample.len(),
        a.seed,
        a.output.display()
    );
    Ok(())
}

fn aggregate_cmd(a: AggregateArgs) -> Result<()> {
    let dataset = a.input.load()?;
    let table = count_flows(&dataset, &a.keys);
    write_file(&a.output, table.to_csv())?;
    println!("{} flows in {} groups -> {}", table.total, table.rows.len(), a.output.display());
    for row in table.rows.iter().take(a.top) {
        let key: Vec<String> = row.key.iter().map(ToString::to_string).collect();
        println!("{}\t{}", key.join(" "), row.flows);
    }
    Ok(())
}

fn select_cmd(a: SelectArgs) -> Result<()> {
    let dataset = a.input.load()?;
    let scores = score_features(&dataset, a.bins)?;
    write_file(&a.output, scores_to_csv(&scores))?;
    let k = a.top_k.min(scores.len());
    println!("top {k} of {} features -> {}", scores.len(), a.output.display());
    for s in &scores[..k] {
        println!("{}\t{}\t{:.4}", s.rank, s.name, s.weight);
    }
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let dataset = a.input.load()?;
    let scores = match &a.features {
        Some(p) => scores_from_csv(&fs::read_to_string(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?)?,
        None => score_features(&dataset, a.bins)?,
    };
    let (selected, _) = select_top_k(&scores, a.top_k.min(scores.len()), &dataset.schema)?;
    let names: Vec<&str> = selected.iter().map(String::as_str).collect();
    let split = split_train_test(&dataset, a.train_fraction, derive_seed(a.seed, SPLIT_STAGE))?;
    let policy = a.bandwidth.policy().unwrap_or(BandwidthPolicy::Auto);
    let mut baseline = fit_baseline(&split.train, &names, policy)?;
    baseline.training_fingerprint = Some(fingerprint_indices(&split.train_indices));
    baseline.save(&a.output)?;
    save_snapshot(&split.test, &a.test_output)?;
    println!(
        "baseline on {} normal records (seed {}), features {}: sigma {:.6}, mean {:.6}, sd {:.6} -> {}",
        baseline.n_train,
        a.seed,
        selected.join(","),
        baseline.kernel.sigma(),
        baseline.mu_corpy,
        baseline.sd_corpy,
        a.output.display()
    );
    println!("{} test records -> {}", split.test.len(), a.test_output.display());
    Ok(())
}

fn score_cmd(a: ScoreArgs) -> Result<()> {
    let baseline = NormalBaseline::load(&a.baseline)?;
    let dataset = a.input.load()?;
    let scored = score_batch(&dataset, &baseline, a.multiplier)?;
    write_file(&a.output, scored_to_csv(&scored))?;
    let flagged = scored.iter().filter(|s| s.score.decision.is_attack()).count();
    println!(
        "{} records scored, {flagged} flagged at multiplier {} -> {}",
        scored.len(),
        a.multiplier,
        a.output.display()
    );
    Ok(())
}

fn write_file(path: impl AsRef<Path>, content: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, content).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn read_scores(path: &Path) -> Result<Vec<netforensic::detector::ScoredFlow>> {
    Ok(scored_from_csv(&fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?)?)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let baseline = NormalBaseline::load(&a.baseline)?;
    let scored = read_scores(&a.scores)?;
    let report = EvalReport::build(
        &scored,
        baseline.sd_corpy,
        &default_multiplier_grid(),
        a.n.unwrap_or(scored.len()),
    )?;
    fs::create_dir_all(&a.output).map_err(|e| anyhow::anyhow!("{}: {e}", a.output.display()))?;
    write_file(a.output.join("report.txt"), report.to_text())?;
    write_file(a.output.join("report.csv"), report.to_csv())?;
    write_file(a.output.join("roc.csv"), roc_to_csv(&report.roc))?;
    write_file(a.output.join("evidence.txt"), format_evidence(&evidence_report(&scored, a.top)))?;
    println!(
        "accuracy {}, FAR {} over {} records -> {}",
        percent(report.accuracy),
        percent(report.far),
        scored.len(),
        a.output.display()
    );
    Ok(())
}

fn roc_cmd(a: RocArgs) -> Result<()> {
    let baseline = NormalBaseline::load(&a.baseline)?;
    let scored = read_scores(&a.scores)?;
    let roc = roc_from_scores(&scored, baseline.sd_corpy, &default_multiplier_grid())?;
    write_file(&a.output, roc_to_csv(&roc))?;
    println!("{} operating points -> {}", roc.len(), a.output.display());
    Ok(())
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if !a.input.is_empty() {
        config.inputs = a.input;
    }
    if let Some(s) = a.schema {
        config.schema = s;
    }
    if a.header {
        config.has_header = Some(true);
    }
    if a.no_header {
        config.has_header = Some(false);
    }
    if let Some(o) = a.output {
        config.output_dir = o;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if !a.n.is_empty() {
        config.sample_sizes = a.n;
    }
    if let Some(b) = a.bins {
        config.bins = b;
    }
    if let Some(k) = a.top_k {
        config.top_k = k;
    }
    match a.bandwidth.policy() {
        Some(BandwidthPolicy::Fixed(s)) => config.sigma = Some(s),
        Some(BandwidthPolicy::Auto) => config.sigma = None,
        None => {}
    }
    if let Some(m) = a.multiplier {
        config.multiplier = m;
    }
    if let Some(f) = a.train_fraction {
        config.train_fraction = f;
    }
    if let Some(t) = a.evidence_top {
        config.evidence_top_n = t;
    }
    if a.no_dedup {
        config.dedup = false;
    }
    let outcome = run_experiment(&config)?;
    println!(
        "rows read {}, dropped {}; seed {}",
        outcome.ingest.rows_read, outcome.ingest.rows_dropped, config.seed
    );
    print!("{}", netforensic::eval::summary_table(&outcome.reports()));
    println!("artifacts -> {}", config.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Ingest(a) => ingest_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Aggregate(a) => aggregate_cmd(a),
        Command::Select(a) => select_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Roc(a) => roc_cmd(a),
        Command::Run(a) => run_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
