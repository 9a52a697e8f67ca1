//! Black-box tests of the `metricad` binary: every subcommand, the exit
//! code contract, and byte-level determinism of produced artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metricad_core::{load_csv, load_model, save_csv, synth_two_gaussians, LabelColumn};

fn metricad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metricad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Writes a labeled synthetic fixture and returns its path.
fn fixture(dir: &Path, n_normal: usize, n_anomaly: usize, d: usize, seed: u64) -> PathBuf {
    let ds = synth_two_gaussians(n_normal, n_anomaly, d, 6.0, seed).unwrap();
    let path = dir.join(format!("data_{n_normal}_{n_anomaly}_{d}_{seed}.csv"));
    save_csv(&ds, &path).unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn train_writes_a_loadable_model_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 60, 6, 3, 1);
    let model = dir.path().join("model.bin");
    let history = dir.path().join("history.csv");

    let out = metricad(&[
        "train",
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--model-out",
        path_str(&model),
        "--history-out",
        path_str(&history),
        "--epochs",
        "4",
        "--metric-dim",
        "8",
        "--batch-size",
        "32",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let artifact = load_model(&model).expect("model loads");
    assert_eq!(artifact.prng, "chacha8");
    let ds = load_csv(&data, Some(&LabelColumn::Name("label".into())), true).unwrap();
    let scores = artifact.scorer.score_all(&ds.x).unwrap();
    assert_eq!(scores.len(), 66);
    assert!(scores.iter().all(|s| s.is_finite()));

    let text = std::fs::read_to_string(&history).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,val_loss,kept"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows[0].starts_with("1,"), "history rows start at epoch 1");
}

#[test]
fn invalid_keep_fraction_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 20, 2, 3, 2);
    let model = dir.path().join("model.bin");
    let out = metricad(&[
        "train",
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--model-out",
        path_str(&model),
        "--rho-n",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2), "config errors exit 2");
    assert!(
        stderr_of(&out).contains("rho_n"),
        "message names the bad parameter: {}",
        stderr_of(&out)
    );
    assert!(!model.exists(), "no partial outputs on config errors");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = metricad(&["train", "--does-not-exist", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identical_seeds_give_byte_identical_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 40, 4, 3, 7);
    let run = |model: &Path, seed: &str| {
        let out = metricad(&[
            "train",
            "--data",
            path_str(&data),
            "--label-column",
            "label",
            "--model-out",
            path_str(model),
            "--epochs",
            "3",
            "--metric-dim",
            "8",
            "--batch-size",
            "16",
            "--seed",
            seed,
        ]);
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    };
    let (a, b, c) = (
        dir.path().join("a.bin"),
        dir.path().join("b.bin"),
        dir.path().join("c.bin"),
    );
    run(&a, "11");
    run(&b, "11");
    run(&c, "12");
    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        "same seed, same bytes"
    );
    assert_ne!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&c).unwrap(),
        "different seed, different bytes"
    );
}

#[test]
fn cli_scores_match_the_in_process_scorer_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 50, 5, 4, 21);
    let model = dir.path().join("model.bin");
    let out = metricad(&[
        "train",
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--model-out",
        path_str(&model),
        "--epochs",
        "3",
        "--metric-dim",
        "8",
        "--batch-size",
        "32",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let scored = metricad(&[
        "score",
        "--model",
        path_str(&model),
        "--data",
        path_str(&data),
        "--label-column",
        "label",
    ]);
    assert!(scored.status.success(), "stderr: {}", stderr_of(&scored));
    let text = stdout_of(&scored);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("score"));
    let cli_scores: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();

    let artifact = load_model(&model).unwrap();
    let ds = load_csv(&data, Some(&LabelColumn::Name("label".into())), true).unwrap();
    let live = artifact.scorer.score_all(&ds.x).unwrap();
    assert_eq!(cli_scores.len(), live.len());
    for (a, b) in cli_scores.iter().zip(&live) {
        assert_eq!(a.to_bits(), b.to_bits(), "shortest round-trip formatting is lossless");
    }
}

#[test]
fn threshold_above_every_score_flags_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 30, 3, 3, 5);
    let model = dir.path().join("model.bin");
    assert!(metricad(&[
        "train",
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--model-out",
        path_str(&model),
        "--epochs",
        "2",
        "--metric-dim",
        "4",
        "--batch-size",
        "16",
    ])
    .status
    .success());

    let out = metricad(&[
        "score",
        "--model",
        path_str(&model),
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--tau",
        "1e300",
    ]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("score,decision"));
    for line in lines {
        assert!(line.ends_with(",0"), "no score exceeds the threshold: {line}");
    }
}

#[test]
fn center_and_dissimilarity_scores_rank_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 40, 4, 3, 9);
    let model = dir.path().join("model.bin");
    assert!(metricad(&[
        "train",
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--model-out",
        path_str(&model),
        "--mode",
        "dissimilarity",
        "--epochs",
        "3",
        "--metric-dim",
        "8",
        "--batch-size",
        "16",
    ])
    .status
    .success());

    let read_scores = |mode: &str| -> Vec<f64> {
        let out = metricad(&[
            "score",
            "--model",
            path_str(&model),
            "--data",
            path_str(&data),
            "--label-column",
            "label",
            "--mode",
            mode,
        ]);
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
        stdout_of(&out)
            .lines()
            .skip(1)
            .map(|l| l.parse().unwrap())
            .collect()
    };
    let center = read_scores("center");
    let dissim = read_scores("dissimilarity");
    assert_eq!(center.len(), dissim.len());

    let order = |scores: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        idx
    };
    assert_eq!(order(&center), order(&dissim), "identical score ordering");
}

#[test]
fn dissimilarity_needs_a_retrieval_bearing_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 25, 2, 3, 4);
    let model = dir.path().join("model.bin");
    assert!(metricad(&[
        "train",
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--model-out",
        path_str(&model),
        "--mode",
        "center",
        "--epochs",
        "2",
        "--metric-dim",
        "4",
        "--batch-size",
        "16",
    ])
    .status
    .success());

    let out = metricad(&[
        "score",
        "--model",
        path_str(&model),
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--mode",
        "dissimilarity",
    ]);
    assert_eq!(out.status.code(), Some(1), "engine error, not usage error");
    assert!(stderr_of(&out).contains("retrieval"), "{}", stderr_of(&out));
}

#[test]
fn mismatched_dimensions_are_an_engine_error() {
    let dir = tempfile::tempdir().unwrap();
    let wide = fixture(dir.path(), 30, 3, 4, 6);
    let narrow = fixture(dir.path(), 30, 3, 2, 6);
    let model = dir.path().join("model.bin");
    assert!(metricad(&[
        "train",
        "--data",
        path_str(&wide),
        "--label-column",
        "label",
        "--model-out",
        path_str(&model),
        "--epochs",
        "2",
        "--metric-dim",
        "4",
        "--batch-size",
        "16",
    ])
    .status
    .success());

    let out = metricad(&[
        "score",
        "--model",
        path_str(&model),
        "--data",
        path_str(&narrow),
        "--label-column",
        "label",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_prints_the_auc_as_a_percentage() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 40, 4, 3, 13);
    let model = dir.path().join("model.bin");
    assert!(metricad(&[
        "train",
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--model-out",
        path_str(&model),
        "--epochs",
        "3",
        "--metric-dim",
        "8",
        "--batch-size",
        "16",
    ])
    .status
    .success());

    let out = metricad(&[
        "eval",
        "--model",
        path_str(&model),
        "--data",
        path_str(&data),
        "--label-column",
        "label",
    ]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    let line = text.trim();
    assert!(
        line.starts_with("AUC ") && line.ends_with('%'),
        "percent format: {line}"
    );
    let value: f64 = line
        .trim_start_matches("AUC ")
        .trim_end_matches('%')
        .parse()
        .unwrap();
    assert!((0.0..=100.0).contains(&value));
    let decimals = line.split('.').nth(1).unwrap();
    assert_eq!(decimals.len(), 3, "two decimals then the percent sign");
}

#[test]
fn cv_all_settings_runs_27_models_and_3_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 36, 9, 3, 17);
    let report = dir.path().join("report.csv");
    let out = metricad(&[
        "cv",
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--epochs",
        "2",
        "--metric-dim",
        "8",
        "--batch-size",
        "16",
        "--report-out",
        path_str(&report),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "repeat,fold,setting,auc");
    let data_rows = lines.iter().filter(|l| !l.starts_with("mean") && **l != lines[0]).count();
    let mean_rows = lines.iter().filter(|l| l.starts_with("mean,")).count();
    assert_eq!(data_rows, 27, "9 runs per setting, 3 settings");
    assert_eq!(mean_rows, 3, "one summary row per setting");
    for setting in ["seen", "unseen", "one_class"] {
        assert!(
            text.contains(&format!(",{setting},")),
            "report covers {setting}"
        );
    }

    let console = stdout_of(&out);
    assert_eq!(
        console.matches("mean AUC").count(),
        3,
        "stdout summarizes each setting: {console}"
    );
    assert!(
        stderr_of(&out).contains("forced to 1"),
        "one_class log mentions the forced keep fraction"
    );
}

#[test]
fn cv_rejects_unlabeled_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 20, 4, 3, 19);
    // No --label-column: the file's label column is read as a feature,
    // leaving the dataset unlabeled from the engine's point of view.
    let out = metricad(&["cv", "--data", path_str(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("label"), "{}", stderr_of(&out));
}

#[test]
fn sweep_emits_one_curve_row_per_grid_point_and_setting() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 36, 9, 3, 23);
    let curve = dir.path().join("curve.csv");
    let out = metricad(&[
        "sweep",
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--parameter",
        "rho-h",
        "--grid",
        "0.5,1.0",
        "--setting",
        "unseen",
        "--epochs",
        "2",
        "--metric-dim",
        "8",
        "--batch-size",
        "16",
        "--curve-out",
        path_str(&curve),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = std::fs::read_to_string(&curve).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "parameter,value,setting,mean_auc");
    assert_eq!(lines.len(), 3, "2 grid points x 1 setting");
    assert!(lines[1].starts_with("rho_h,0.5,unseen,"));
    assert!(lines[2].starts_with("rho_h,1,unseen,"));
}

#[test]
fn sweep_grid_point_at_one_matches_a_plain_cv_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 36, 9, 3, 29);
    let curve = dir.path().join("curve.csv");
    let report = dir.path().join("report.csv");

    let sweep = metricad(&[
        "sweep",
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--parameter",
        "rho-n",
        "--grid",
        "1.0",
        "--setting",
        "unseen",
        "--epochs",
        "2",
        "--metric-dim",
        "8",
        "--batch-size",
        "16",
        "--seed",
        "31",
        "--curve-out",
        path_str(&curve),
    ]);
    assert!(sweep.status.success(), "stderr: {}", stderr_of(&sweep));

    let cv = metricad(&[
        "cv",
        "--data",
        path_str(&data),
        "--label-column",
        "label",
        "--rho-n",
        "1.0",
        "--setting",
        "unseen",
        "--epochs",
        "2",
        "--metric-dim",
        "8",
        "--batch-size",
        "16",
        "--seed",
        "31",
        "--report-out",
        path_str(&report),
    ]);
    assert!(cv.status.success(), "stderr: {}", stderr_of(&cv));

    let curve_text = std::fs::read_to_string(&curve).unwrap();
    let curve_mean = curve_text
        .lines()
        .nth(1)
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .to_string();
    let report_text = std::fs::read_to_string(&report).unwrap();
    let report_mean = report_text
        .lines()
        .find(|l| l.starts_with("mean,"))
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .to_string();
    assert_eq!(
        curve_mean, report_mean,
        "a no-distillation sweep point reproduces the no-distillation cv run"
    );
}

#[test]
fn invalid_grid_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), 20, 4, 3, 37);
    for grid in ["0.0,0.5", "1.5", "", "0.5:0.1:0.1", "a,b"] {
        let out = metricad(&[
            "sweep",
            "--data",
            path_str(&data),
            "--label-column",
            "label",
            "--parameter",
            "rho-n",
            "--grid",
            grid,
        ]);
        assert_eq!(out.status.code(), Some(2), "grid {grid:?} must be rejected");
    }
}
