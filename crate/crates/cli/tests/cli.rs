use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rankcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankcp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn small_run(dir: &Path, parallelism: &str) -> Output {
    rankcp(&[
        "run",
        "--n",
        "40",
        "--m",
        "80",
        "--trials",
        "12",
        "--K",
        "2000",
        "--seed",
        "9",
        "--methods",
        "dcr,mdcr,tcpr,oracle",
        "--parallelism",
        parallelism,
        "--out-dir",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn trials_csv_is_identical_across_runs_and_parallelism() {
    let root = tempfile::tempdir().unwrap();
    let mut contents = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "8")] {
        let dir = root.path().join(name);
        let out = small_run(&dir, threads);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        contents.push(fs::read(dir.join("trials.csv")).unwrap());
    }
    assert!(contents.iter().all(|c| c == &contents[0]));
    let text = String::from_utf8(contents[0].clone()).unwrap();
    assert!(text.starts_with("seed,method,coverage,fcp,rel_length,threshold\n"));
    assert_eq!(text.lines().count(), 1 + 12 * 4);
}

#[test]
fn run_writes_report_and_timings() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_run(dir.path(), "1");
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let summaries = report["methods"].as_array().unwrap();
    assert_eq!(summaries.len(), 4);
    let oracle = summaries.iter().find(|s| s["name"] == "Oracle").unwrap();
    assert!(oracle["coverage_mean"].as_f64().unwrap() > 0.5);
    let timings = fs::read_to_string(dir.path().join("timings.csv")).unwrap();
    assert!(timings.contains("envelope_fit"));
    assert!(stdout(&out).contains("DCR"));
}

#[test]
fn sweep_writes_long_format_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = rankcp(&[
        "sweep",
        "--alpha",
        "0.1,0.2",
        "--n",
        "30",
        "--m",
        "60",
        "--trials",
        "5",
        "--methods",
        "dcr,mdcr",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(table.starts_with("axis_value,method,metric,mean,std\n"));
    assert!(table.lines().any(|l| l.starts_with("0.2,MDCR,coverage,")));
    assert!(dir.path().join("trials_1.csv").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let bad_alpha = rankcp(&["run", "--alpha", "1.5", "--trials", "1"]);
    assert_eq!(bad_alpha.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_alpha.stderr).contains("alpha"));

    let two_axes = rankcp(&["sweep", "--alpha", "0.1,0.2", "--n", "10,20"]);
    assert_eq!(two_axes.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "n = 20\nbogus_key = 3\n").unwrap();
    let unknown = rankcp(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("bogus_key"));
}

#[test]
fn gen_then_external_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = rankcp(&["gen", "--n", "25", "--m", "40", "--score", "ra", "--out-dir", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["population.csv", "predictions.csv", "metadata.json"] {
        assert!(data.join(file).exists(), "{file}");
    }

    let cfg = dir.path().join("external.cfg");
    let results = dir.path().join("results");
    fs::write(
        &cfg,
        format!(
            "generator = external\npopulation = {}\npredictions = {}\nscore = ra\nmethods = dcr,oracle\ntrials = 3\nout_dir = {}\n",
            data.join("population.csv").display(),
            data.join("predictions.csv").display(),
            results.display()
        ),
    )
    .unwrap();
    let out = rankcp(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sets = fs::read_to_string(results.join("sets.csv")).unwrap();
    assert!(sets.starts_with("seed,method,item_id,lo,hi\n"));
    assert_eq!(sets.lines().count(), 1 + 3 * 2 * 40);
}

#[test]
fn bad_prediction_rows_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(rankcp(&["gen", "--n", "10", "--m", "10", "--out-dir", data.to_str().unwrap()]).status.success());
    let preds = data.join("predictions.csv");
    let text = fs::read_to_string(&preds).unwrap().replacen("\n3,", "\n3,2.5x", 1);
    fs::write(&preds, text).unwrap();
    let out = rankcp(&[
        "run",
        "--set",
        "generator=external",
        "--set",
        &format!("population={}", data.join("population.csv").display()),
        "--set",
        &format!("predictions={}", preds.display()),
        "--methods",
        "dcr",
        "--trials",
        "1",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 5"));
}

#[test]
fn verify_reports_every_check_and_exit_code_matches() {
    let out = rankcp(&["verify"]);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert!(lines.iter().any(|l| l.starts_with("PASS rank pmf")));
    assert!(lines.iter().filter(|l| l.contains("Oracle coverage")).all(|l| l.starts_with("PASS")));
    let any_failed = lines.iter().any(|l| l.starts_with("FAIL"));
    assert_eq!(out.status.code(), Some(if any_failed { 3 } else { 0 }));
}
