use std::fs;
use std::path::{Path, PathBuf};

use rankcp::experiment::io::{write_population_csv, write_predictions_csv};
use rankcp::experiment::{generate_dataset, load_external, run_experiment, ExperimentConfig};
use rankcp::{rank_view, Error, ScoreKind};

fn generated(dir: &Path, score: &str) -> (PathBuf, PathBuf, rankcp::experiment::SyntheticData) {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [("n", "30"), ("m", "50"), ("score", score), ("seed", "5")] {
        cfg.set(k, v).unwrap();
    }
    let data = generate_dataset(&cfg).unwrap();
    let (pop, pred) = (dir.join("population.csv"), dir.join("predictions.csv"));
    write_population_csv(&pop, &data.population).unwrap();
    write_predictions_csv(&pred, &data.preds).unwrap();
    (pop, pred, data)
}

fn data_error(result: rankcp::Result<rankcp::experiment::ExternalData>) -> (usize, String) {
    match result {
        Err(Error::Data { row, message, .. }) => (row, message),
        Err(other) => panic!("expected a data error, got {other}"),
        Ok(_) => panic!("expected a data error"),
    }
}

#[test]
fn generated_files_load_back_identically() {
    for (score, kind) in [("ra", ScoreKind::Ra), ("va", ScoreKind::Va)] {
        let dir = tempfile::tempdir().unwrap();
        let (pop, pred, data) = generated(dir.path(), score);
        let loaded = load_external(&pop, &pred, kind).unwrap();
        assert_eq!(loaded.population().unwrap(), data.population);
        assert_eq!(loaded.preds, data.preds);
        let view = rank_view(&data.population).unwrap();
        assert_eq!(&loaded.view, view.observed());
        assert_eq!(loaded.truth.as_ref().unwrap().test_abs_ranks(), view.test_abs_ranks());
    }
}

#[test]
fn non_integer_rank_prediction_names_its_row() {
    let dir = tempfile::tempdir().unwrap();
    let (pop, pred, _) = generated(dir.path(), "ra");
    let text = fs::read_to_string(&pred).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = "2,4.5".into();
    fs::write(&pred, lines.join("\n") + "\n").unwrap();
    let (row, message) = data_error(load_external(&pop, &pred, ScoreKind::Ra));
    assert_eq!(row, 4);
    assert!(message.contains("4.5"), "{message}");
}

#[test]
fn malformed_population_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (pop, pred, _) = generated(dir.path(), "ra");
    let original = fs::read_to_string(&pop).unwrap();

    fs::write(&pop, original.replacen("y_true", "target", 1)).unwrap();
    let (_, message) = data_error(load_external(&pop, &pred, ScoreKind::Ra));
    assert!(message.contains("y_true"), "{message}");

    let mut lines: Vec<&str> = original.lines().collect();
    let second = lines[2].replacen('1', "0", 1);
    lines[2] = &second;
    fs::write(&pop, lines.join("\n") + "\n").unwrap();
    let (row, message) = data_error(load_external(&pop, &pred, ScoreKind::Ra));
    assert_eq!(row, 3);
    assert!(message.contains("duplicate"), "{message}");

    fs::write(&pop, original.replacen(",test,", ",holdout,", 1)).unwrap();
    let (_, message) = data_error(load_external(&pop, &pred, ScoreKind::Ra));
    assert!(message.contains("holdout"), "{message}");
}

#[test]
fn hidden_test_values_give_sets_without_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let (pop, pred, _) = generated(dir.path(), "va");
    let blanked: Vec<String> = fs::read_to_string(&pop)
        .unwrap()
        .lines()
        .map(|line| match line.split(',').collect::<Vec<_>>()[..] {
            [id, "test", _] => format!("{id},test,"),
            _ => line.to_string(),
        })
        .collect();
    fs::write(&pop, blanked.join("\n") + "\n").unwrap();

    let loaded = load_external(&pop, &pred, ScoreKind::Va).unwrap();
    assert!(loaded.truth.is_none());
    assert_eq!(loaded.view.n(), 30);

    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("generator", "external"),
        ("population", pop.to_str().unwrap()),
        ("predictions", pred.to_str().unwrap()),
        ("score", "va"),
        ("methods", "dcr,mdcr,tcpr"),
        ("K", "2000"),
        ("trials", "2"),
    ] {
        cfg.set(k, v).unwrap();
    }
    let out = run_experiment(&cfg).unwrap();
    let point = &out.points[0];
    assert!(point.trials.iter().all(|t| t.coverage.is_none() && t.fcp.is_none()));
    assert!(point.summaries.iter().all(|s| s.coverage_mean.is_none()));
    let sets = point.sets.as_ref().expect("sets kept for external data");
    assert!(sets.iter().all(|t| t.sets.len() == 50));

    let mut with_oracle = cfg.clone();
    with_oracle.set("methods", "dcr,oracle").unwrap();
    assert!(matches!(run_experiment(&with_oracle), Err(Error::Config { .. })));
}
