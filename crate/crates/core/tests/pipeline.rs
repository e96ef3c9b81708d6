use std::fs;
use std::path::Path;

use netforensic::aggregate::srs_sample;
use netforensic::detector::{fit_baseline, score_batch, NormalBaseline};
use netforensic::eval::{default_multiplier_grid, EvalReport};
use netforensic::ingest::write_csv_file;
use netforensic::pipeline::{
    clean, derive_seed, fingerprint_indices, run_experiment, run_on_dataset, scored_from_csv, scored_to_csv,
    split_train_test, ExperimentConfig, SAMPLE_STAGE, SPLIT_STAGE,
};
use netforensic::select::{score_features, scores_from_csv, scores_to_csv, select_top_k};
use netforensic::snapshot::{load_snapshot, save_snapshot};
use netforensic::synthetic::GaussianClusters;
use netforensic::Label;

const ARTIFACTS: [&str; 8] = [
    "features.csv",
    "baseline.json",
    "scores.csv",
    "roc.csv",
    "evidence.txt",
    "report.txt",
    "report.csv",
    "run.txt",
];

fn synthetic_config(dir: &Path, sizes: Vec<usize>) -> ExperimentConfig {
    let data = GaussianClusters {
        n_normal: 800,
        n_attack: 400,
        dims: 6,
        attack_offset: 2.5,
        seed: 7,
    }
    .generate();
    let input = dir.join("flows.csv");
    write_csv_file(&data, &input).unwrap();
    ExperimentConfig {
        inputs: vec![input],
        schema: "infer".into(),
        sample_sizes: sizes,
        seed: 42,
        top_k: 4,
        output_dir: dir.join("out"),
        ..ExperimentConfig::default()
    }
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn identical_config_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synthetic_config(tmp.path(), vec![600, 1000]);
    run_experiment(&config).unwrap();
    let first = read_all(&config.output_dir);
    fs::remove_dir_all(&config.output_dir).unwrap();
    run_experiment(&config).unwrap();
    let second = read_all(&config.output_dir);
    assert_eq!(first.len(), 2 * ARTIFACTS.len() + 1);
    assert_eq!(first, second);
}

#[test]
fn three_sizes_give_three_summary_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synthetic_config(tmp.path(), vec![400, 700, 1000]);
    let outcome = run_experiment(&config).unwrap();
    assert_eq!(outcome.runs.len(), 3);
    let summary = fs::read_to_string(config.output_dir.join("summary.txt")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).take_while(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 3);
    for (row, n) in rows.iter().zip([400, 700, 1000]) {
        assert!(row.starts_with(&format!("{n}\t")), "{row}");
        assert_eq!(row.matches('%').count(), 2);
    }
    for n in [400, 700, 1000] {
        for name in ARTIFACTS {
            assert!(config.output_dir.join(format!("n_{n}")).join(name).is_file(), "{n} {name}");
        }
    }
}

#[test]
fn staged_run_from_saved_artifacts_matches_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synthetic_config(tmp.path(), vec![900]);
    let end_to_end = run_experiment(&config).unwrap().runs.remove(0);

    // same stages, each persisted and reloaded before the next
    let (loaded, _) = netforensic::pipeline::load_inputs(&config).unwrap();
    let cleaned = clean(&loaded, config.dedup);
    let sample = srs_sample(&cleaned, 900, derive_seed(config.seed, SAMPLE_STAGE)).unwrap();
    let snap = tmp.path().join("sample.snap");
    save_snapshot(&sample, &snap).unwrap();
    let sample = load_snapshot(&snap).unwrap();

    let scores = scores_from_csv(&scores_to_csv(&score_features(&sample, config.bins).unwrap())).unwrap();
    let (selected, _) = select_top_k(&scores, config.top_k, &sample.schema).unwrap();
    assert_eq!(selected, end_to_end.selected);

    let split = split_train_test(&sample, config.train_fraction, derive_seed(config.seed, SPLIT_STAGE)).unwrap();
    let names: Vec<&str> = selected.iter().map(String::as_str).collect();
    let mut baseline = fit_baseline(&split.train, &names, config.bandwidth()).unwrap();
    baseline.training_fingerprint = Some(fingerprint_indices(&split.train_indices));
    let path = tmp.path().join("baseline.json");
    baseline.save(&path).unwrap();
    let baseline = NormalBaseline::load(&path).unwrap();
    assert_eq!(baseline, end_to_end.baseline);

    let test_snap = tmp.path().join("test.snap");
    save_snapshot(&split.test, &test_snap).unwrap();
    let scored = score_batch(&load_snapshot(&test_snap).unwrap(), &baseline, config.multiplier).unwrap();
    let scored = scored_from_csv(&scored_to_csv(&scored)).unwrap();
    assert_eq!(scored_to_csv(&scored), scored_to_csv(&end_to_end.scored));

    let report = EvalReport::build(&scored, baseline.sd_corpy, &default_multiplier_grid(), sample.len()).unwrap();
    assert_eq!(report.to_text(), end_to_end.report.to_text());
}

#[test]
fn training_split_never_contains_attacks() {
    for seed in 0..20 {
        let data = GaussianClusters {
            n_normal: 150,
            n_attack: 150,
            dims: 3,
            attack_offset: 1.0,
            seed,
        }
        .generate();
        let split = split_train_test(&data, 0.6, seed).unwrap();
        assert_eq!(split.train.len(), 90);
        assert!(split.train_indices.iter().all(|&i| data.records[i].label == Some(Label::Normal)));
        assert!(split.train.records.iter().all(|r| r.label == Some(Label::Normal)));
        assert_eq!(split.train.len() + split.test.len(), data.len());
        assert_eq!(split.test.records.iter().filter(|r| r.label == Some(Label::Attack)).count(), 150);
    }
}

#[test]
fn run_on_dataset_records_training_fingerprint() {
    let data = GaussianClusters {
        n_normal: 300,
        n_attack: 100,
        dims: 4,
        attack_offset: 3.0,
        seed: 1,
    }
    .generate();
    let config = ExperimentConfig {
        top_k: 3,
        ..ExperimentConfig::default()
    };
    let runs = run_on_dataset(&data, &config).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0].sample_size, 400);
    assert_eq!(runs[0].baseline.n_train, 180);
    assert_eq!(runs[0].baseline.training_fingerprint.as_ref().unwrap().len(), 64);
}
