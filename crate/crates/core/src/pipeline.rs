//! End-to-end experiment runs: ingest → clean → sample → select → fit →
//! score → evaluate, with every artifact written to an output directory.
//!
//! All randomness derives from one experiment seed. Each stochastic stage
//! gets its own seed via [`derive_seed`], so the CLI can re-run a single stage
//! with the same `--seed` and land on the same result.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::aggregate::{deduplicate, drop_missing, srs_indices, srs_sample};
use crate::detector::{fit_baseline, score_batch, BandwidthPolicy, NormalBaseline, ScoredFlow};
use crate::error::{Error, Result, StageContext};
use crate::eval::{
    default_multiplier_grid, evidence_report, format_evidence, roc_to_csv, summary_table, EvalReport,
};
use crate::flow::{Dataset, FeatureSchema, Label};
use crate::ingest::{self, BadRowPolicy, CsvOptions, IngestStats};
use crate::select::{score_features, scores_to_csv, select_top_k, FeatureScore};

pub const SAMPLE_STAGE: &str = "sample";
pub const SPLIT_STAGE: &str = "split";

/// Experiment parameters. Loaded from a TOML key-value file; every field
/// has a default except `inputs`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub inputs: Vec<PathBuf>,
    /// Built-in schema name (`unsw-nb15`) or `infer` to read roles from the header.
    pub schema: String,
    /// Defaults to `false` for built-in schemas and `true` for `infer`.
    pub has_header: Option<bool>,
    /// One run per size; empty means use every cleaned record.
    pub sample_sizes: Vec<usize>,
    pub seed: u64,
    pub dedup: bool,
    pub bins: usize,
    pub top_k: usize,
    /// Fixed kernel bandwidth; `None` selects it automatically.
    pub sigma: Option<f64>,
    pub multiplier: f64,
    /// Share of normal records used to fit the baseline.
    pub train_fraction: f64,
    pub evidence_top_n: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            inputs: Vec::new(),
            schema: "unsw-nb15".into(),
            has_header: None,
            sample_sizes: Vec::new(),
            seed: 1,
            dedup: true,
            bins: crate::select::DEFAULT_BINS,
            top_k: 8,
            sigma: None,
            multiplier: crate::detector::DEFAULT_MULTIPLIER,
            train_fraction: 0.6,
            evidence_top_n: 20,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.bins < 2 {
            return bad(format!("bins must be at least 2, got {}", self.bins));
        }
        if self.top_k == 0 {
            return bad("top_k must be positive".into());
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("sigma must be positive, got {s}"));
            }
        }
        if !(self.multiplier.is_finite() && self.multiplier > 0.0) {
            return bad(format!("multiplier must be positive, got {}", self.multiplier));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            ));
        }
        if self.sample_sizes.contains(&0) {
            return bad("sample sizes must be positive".into());
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> BandwidthPolicy {
        match self.sigma {
            Some(s) => BandwidthPolicy::Fixed(s),
            None => BandwidthPolicy::Auto,
        }
    }

    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            has_header: self.has_header.unwrap_or(self.schema == "infer"),
            on_bad_row: BadRowPolicy::Skip,
        }
    }

    /// Canonical `key = value` rendering, echoed into run artifacts.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let inputs: Vec<String> = self.inputs.iter().map(|p| p.display().to_string()).collect();
        let _ = writeln!(out, "inputs = {:?}", inputs);
        let _ = writeln!(out, "schema = {:?}", self.schema);
        let _ = writeln!(out, "has_header = {}", self.csv_options().has_header);
        let _ = writeln!(out, "sample_sizes = {:?}", self.sample_sizes);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "dedup = {}", self.dedup);
        let _ = writeln!(out, "bins = {}", self.bins);
        let _ = writeln!(out, "top_k = {}", self.top_k);
        match self.sigma {
            Some(s) => {
                let _ = writeln!(out, "sigma = {s}");
            }
            None => {
                let _ = writeln!(out, "sigma = \"auto\"");
            }
        }
        let _ = writeln!(out, "multiplier = {}", self.multiplier);
        let _ = writeln!(out, "train_fraction = {}", self.train_fraction);
        let _ = writeln!(out, "evidence_top_n = {}", self.evidence_top_n);
        let _ = writeln!(out, "output_dir = {:?}", self.output_dir.display().to_string());
        out
    }
}

/// Stage seed: the first 8 bytes (little-endian) of SHA-256(seed ‖ stage).
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn resolve_schema(name: &str, first_input: Option<&Path>) -> Result<FeatureSchema> {
    if let Some(s) = FeatureSchema::builtin(name) {
        return Ok(s);
    }
    if name == "infer" {
        let path = first_input.ok_or(Error::Empty("inputs"))?;
        return FeatureSchema::infer_from_header(&ingest::read_header(path)?);
    }
    Err(Error::Config(format!("unknown schema `{name}`")))
}

/// Loads every input under the configured schema.
pub fn load_inputs(config: &ExperimentConfig) -> Result<(Dataset, IngestStats)> {
    if config.inputs.is_empty() {
        return Err(Error::Config("no input files".into()));
    }
    let schema = resolve_schema(&config.schema, config.inputs.first().map(PathBuf::as_path))?;
    ingest::load_csv_files(&config.inputs, &schema, config.csv_options())
}

/// Deduplication (optional) followed by missing-value removal.
pub fn clean(dataset: &Dataset, dedup: bool) -> Dataset {
    let deduped = if dedup { deduplicate(dataset).0 } else { dataset.clone() };
    drop_missing(&deduped).0
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    /// Positions of the training records in the split's input, ascending.
    pub train_indices: Vec<usize>,
}

/// Draws `⌊fraction · normals⌋` normal records for training; everything else
/// (remaining normals and all attacks) is the test set, in input order.
pub fn split_train_test(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param(format!("train fraction must be in (0, 1), got {fraction}")));
    }
    let mut normals = Vec::new();
    for (i, r) in dataset.records.iter().enumerate() {
        match r.label {
            Some(Label::Normal) => normals.push(i),
            Some(Label::Attack) => {}
            None => return Err(Error::Unlabeled),
        }
    }
    let n_train = (fraction * normals.len() as f64).floor() as usize;
    if n_train < 2 {
        return Err(Error::param(format!(
            "{} normal records leave only {n_train} for training",
            normals.len()
        )));
    }
    let picked = srs_indices(normals.len(), n_train, seed)?;
    let train_indices: Vec<usize> = picked.iter().map(|&p| normals[p]).collect();
    let mut in_train = vec![false; dataset.len()];
    for &i in &train_indices {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = dataset
        .records
        .iter()
        .cloned()
        .zip(&in_train)
        .partition(|(_, t)| **t);
    let strip = |v: Vec<(crate::flow::FlowRecord, &bool)>| v.into_iter().map(|(r, _)| r).collect();
    Ok(Split {
        train: dataset.derive(strip(train), format!("train split: {n_train} normal records, fraction={fraction} seed={seed}")),
        test: dataset.derive(strip(test), format!("test split: fraction={fraction} seed={seed}")),
        train_indices,
    })
}

/// SHA-256 (hex) over indices encoded as little-endian u64.
pub fn fingerprint_indices(indices: &[usize]) -> String {
    let mut h = Sha256::new();
    for &i in indices {
        h.update((i as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Per-record scores as CSV.
pub fn scored_to_csv(scored: &[ScoredFlow]) -> String {
    let mut out =
        String::from("srcip,sport,dstip,dsport,proto,label,attack_cat,corpy,deviation,risk_level,decision\n");
    for s in scored {
        let label = s.label.map(|l| l.as_u8().to_string()).unwrap_or_default();
        let decision = if s.score.decision.is_attack() { "attack" } else { "normal" };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.key.src_ip,
            s.key.src_port,
            s.key.dst_ip,
            s.key.dst_port,
            s.key.proto,
            label,
            csv_field(s.class.as_deref().unwrap_or("")),
            s.score.corpy,
            s.score.deviation,
            s.score.risk_level,
            decision
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn scored_from_csv(text: &str) -> Result<Vec<ScoredFlow>> {
    use crate::detector::{Decision, RiskScore};
    use crate::flow::FlowKey;

    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != 11 {
            return Err(Error::BadRow { row: i as u64 + 2, reason: format!("{} fields, expected 11", row.len()) });
        }
        let bad = |what: &str| Error::BadRow { row: i as u64 + 2, reason: format!("invalid {what}") };
        let num = |j: usize, what: &str| row[j].parse::<f64>().map_err(|_| bad(what));
        let port = |j: usize, what: &str| row[j].parse::<u32>().map_err(|_| bad(what));
        out.push(ScoredFlow {
            key: FlowKey::new(&row[0], port(1, "sport")?, &row[2], port(3, "dsport")?, &row[4]),
            label: match &row[5] {
                "" => None,
                v => Some(v.parse::<u8>().ok().and_then(Label::from_u8).ok_or_else(|| bad("label"))?),
            },
            class: (!row[6].is_empty()).then(|| row[6].to_string()),
            score: RiskScore {
                corpy: num(7, "corpy")?,
                deviation: num(8, "deviation")?,
                risk_level: num(9, "risk_level")?,
                decision: match &row[10] {
                    "attack" => Decision::Attack,
                    "normal" => Decision::Normal,
                    _ => return Err(bad("decision")),
                },
            },
        });
    }
    Ok(out)
}

/// Everything one run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub sample_size: usize,
    pub feature_scores: Vec<FeatureScore>,
    pub selected: Vec<String>,
    pub baseline: NormalBaseline,
    pub scored: Vec<ScoredFlow>,
    pub report: EvalReport,
    pub provenance: String,
}

impl RunArtifacts {
    /// Writes `features.csv`, `baseline.json`, `scores.csv`, `roc.csv`,
    /// `evidence.txt`, `report.txt`, `report.csv` and `run.txt` into `dir`.
    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, content: String| {
            let p = dir.join(name);
            fs::write(&p, content).map_err(|e| Error::io(p, e))
        };
        put("features.csv", scores_to_csv(&self.feature_scores))?;
        self.baseline.save(dir.join("baseline.json"))?;
        put("scores.csv", scored_to_csv(&self.scored))?;
        put("roc.csv", roc_to_csv(&self.report.roc))?;
        put(
            "evidence.txt",
            format_evidence(&evidence_report(&self.scored, config.evidence_top_n)),
        )?;
        put("report.txt", self.report.to_text())?;
        put("report.csv", self.report.to_csv())?;
        let mut run = String::from("[config]\n");
        run.push_str(&config.describe());
        let _ = writeln!(run, "\n[selected]\n{}", self.selected.join(","));
        let _ = writeln!(
            run,
            "\n[baseline]\nsigma = {}\nmu_corpy = {}\nsd_corpy = {}\nn_train = {}\ntraining_fingerprint = {}",
            self.baseline.kernel.sigma(),
            self.baseline.mu_corpy,
            self.baseline.sd_corpy,
            self.baseline.n_train,
            self.baseline.training_fingerprint.as_deref().unwrap_or("-")
        );
        let _ = writeln!(run, "\n[provenance]\n{}", self.provenance);
        put("run.txt", run)
    }
}

/// Runs select → split → fit → score → evaluate on an already cleaned and
/// sampled dataset.
pub fn run_on_sample(sample: &Dataset, config: &ExperimentConfig) -> Result<RunArtifacts> {
    let feature_scores = score_features(sample, config.bins).stage("select")?;
    let k = config.top_k.min(feature_scores.len());
    let (selected, _) = select_top_k(&feature_scores, k, &sample.schema).stage("select")?;
    let names: Vec<&str> = selected.iter().map(String::as_str).collect();

    let split = split_train_test(sample, config.train_fraction, derive_seed(config.seed, SPLIT_STAGE))
        .stage("split")?;
    if split.train_indices.iter().any(|&i| sample.records[i].label != Some(Label::Normal)) {
        return Err(Error::Baseline("attack record in training split".into())).stage("split");
    }
    let mut baseline = fit_baseline(&split.train, &names, config.bandwidth()).stage("fit")?;
    baseline.training_fingerprint = Some(fingerprint_indices(&split.train_indices));

    let scored = score_batch(&split.test, &baseline, config.multiplier).stage("score")?;
    let report = EvalReport::build(&scored, baseline.sd_corpy, &default_multiplier_grid(), sample.len())
        .stage("evaluate")?;
    Ok(RunArtifacts {
        sample_size: sample.len(),
        feature_scores,
        selected,
        baseline,
        scored,
        report,
        provenance: split.test.provenance.clone(),
    })
}

/// Cleans `dataset`, then runs once per configured sample size.
pub fn run_on_dataset(dataset: &Dataset, config: &ExperimentConfig) -> Result<Vec<RunArtifacts>> {
    config.validate()?;
    let cleaned = clean(dataset, config.dedup);
    let sizes = if config.sample_sizes.is_empty() {
        vec![cleaned.len()]
    } else {
        config.sample_sizes.clone()
    };
    sizes
        .iter()
        .map(|&n| {
            let sample = if n == cleaned.len() {
                cleaned.derive(cleaned.records.clone(), "full cleaned dataset")
            } else {
                srs_sample(&cleaned, n, derive_seed(config.seed, SAMPLE_STAGE)).stage("sample")?
            };
            run_on_sample(&sample, config)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub ingest: IngestStats,
    pub runs: Vec<RunArtifacts>,
}

impl ExperimentOutcome {
    pub fn reports(&self) -> Vec<EvalReport> {
        self.runs.iter().map(|r| r.report.clone()).collect()
    }
}

/// Full run from config: loads inputs, executes every sample size and writes
/// artifacts to `output_dir/n_<size>/` plus `output_dir/summary.txt`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (dataset, ingest) = load_inputs(config).stage("ingest")?;
    let runs = run_on_dataset(&dataset, config)?;
    write_outcome(config, &ingest, &runs).stage("write")?;
    Ok(ExperimentOutcome { ingest, runs })
}

pub fn write_outcome(config: &ExperimentConfig, ingest: &IngestStats, runs: &[RunArtifacts]) -> Result<()> {
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for run in runs {
        run.write(&out.join(format!("n_{}", run.sample_size)), config)?;
    }
    let reports: Vec<EvalReport> = runs.iter().map(|r| r.report.clone()).collect();
    let mut summary = summary_table(&reports);
    let _ = writeln!(
        summary,
        "\nrows read {}, dropped {}{}",
        ingest.rows_read,
        ingest.rows_dropped,
        ingest
            .drop_reasons
            .iter()
            .map(|(k, v)| format!(", {k}: {v}"))
            .collect::<String>()
    );
    let p = out.join("summary.txt");
    fs::write(&p, summary).map_err(|e| Error::io(p, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::GaussianClusters;

    #[test]
    fn config_defaults_and_parsing() {
        let c = ExperimentConfig::from_toml("inputs = [\"a.csv\"]\nsample_sizes = [100000, 200000, 300000]\nsigma = 0.5\n").unwrap();
        assert_eq!(c.top_k, 8);
        assert_eq!(c.multiplier, 2.0);
        assert_eq!(c.sample_sizes.len(), 3);
        assert_eq!(c.bandwidth(), BandwidthPolicy::Fixed(0.5));
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        let bad = ExperimentConfig { train_fraction: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seeds_differ_by_stage() {
        assert_ne!(derive_seed(1, SAMPLE_STAGE), derive_seed(1, SPLIT_STAGE));
        assert_eq!(derive_seed(7, SAMPLE_STAGE), derive_seed(7, SAMPLE_STAGE));
    }

    #[test]
    fn split_is_normal_only_and_disjoint() {
        let ds = GaussianClusters { n_normal: 50, n_attack: 30, dims: 3, ..Default::default() }.generate();
        let s = split_train_test(&ds, 0.6, 9).unwrap();
        assert_eq!(s.train.len(), 30);
        assert_eq!(s.test.len(), 50);
        assert!(s.train.records.iter().all(|r| r.label == Some(Label::Normal)));
        assert!(s.train_indices.iter().all(|&i| ds.records[i].label == Some(Label::Normal)));
        assert_eq!(s.test.count_labels(), (20, 30));
    }

    #[test]
    fn scored_csv_round_trip() {
        let ds = GaussianClusters { n_normal: 40, n_attack: 10, dims: 3, ..Default::default() }.generate();
        let cfg = ExperimentConfig { top_k: 3, ..Default::default() };
        let run = run_on_sample(&ds, &cfg).unwrap();
        let back = scored_from_csv(&scored_to_csv(&run.scored)).unwrap();
        assert_eq!(back, run.scored);
    }
}
