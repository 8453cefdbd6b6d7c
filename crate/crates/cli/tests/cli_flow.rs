//! End-to-end runs of the `stereoprobe` binary over the bundled sample
//! fixtures: every subcommand, exercised the way a user would chain them.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stereoprobe_core::corpus::{load_eval_set, Label};
use stereoprobe_gateway::{GenerationConfig, PropensityEndpoint, RecordingEndpoint, UnmaskSession};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn stereoprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereoprobe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let output = stereoprobe(args);
    assert!(
        output.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn corpus_arg() -> String {
    fixture("sample_corpus.jsonl").display().to_string()
}

#[test]
fn corpus_validate_accepts_the_sample_corpus() {
    let stdout = run_ok(&["corpus", "validate", "--corpus", &corpus_arg()]);
    assert!(stdout.contains("ok"), "missing ok line: {stdout}");
    assert!(
        stdout.lines().any(|l| l.starts_with("total") && l.contains("12")),
        "missing total row with 12 contexts: {stdout}"
    );

    let output = stereoprobe(&["corpus", "validate", "--corpus", "/nonexistent.jsonl"]);
    assert!(!output.status.success(), "missing corpus must fail");
}

#[test]
fn train_writes_run_artifacts_and_the_checkpoint_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let stdout = run_ok(&[
        "train",
        "--corpus",
        &corpus_arg(),
        "--out",
        out.to_str().unwrap(),
        "--loss",
        "nt_xent",
        "--epochs",
        "2",
        "--batch-size",
        "16",
    ]);
    assert!(stdout.contains("validation Δsim"), "missing Δsim summary: {stdout}");

    let run_dirs: Vec<PathBuf> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(run_dirs.len(), 1, "expected exactly one run directory");
    let run_dir = &run_dirs[0];
    for artifact in ["manifest.json", "weights.bin", "metrics.csv", "record.json"] {
        assert!(
            run_dir.join(artifact).is_file(),
            "missing {artifact} in {}",
            run_dir.display()
        );
    }

    // The checkpoint drives any encoder-consuming subcommand.
    let stdout = run_ok(&[
        "metrics",
        "deltasim",
        "--corpus",
        &corpus_arg(),
        "--encoder-checkpoint",
        run_dir.to_str().unwrap(),
        "--split",
        "all",
    ]);
    assert!(stdout.contains("pooled"), "missing pooled row: {stdout}");
}

#[test]
fn deltasim_json_reports_absolute_separation_per_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.json");
    run_ok(&[
        "metrics",
        "deltasim",
        "--corpus",
        &corpus_arg(),
        "--split",
        "all",
        "--out",
        out.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let mu_intra = report["mu_intra"].as_f64().unwrap();
    let mu_inter = report["mu_inter"].as_f64().unwrap();
    let delta = report["delta_sim"].as_f64().unwrap();
    assert!((delta - (mu_intra - mu_inter).abs()).abs() < 1e-12);
    let per_category = report["per_category"].as_object().unwrap();
    assert_eq!(per_category.len(), 5, "all five categories present");
}

#[test]
fn sweep_writes_outcomes_and_the_heatmap_report_renders_them() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.yaml");
    std::fs::write(&grid, "temperatures: [0.1]\nmargins: [0.3, 0.5]\nepochs: [1]\n").unwrap();
    let out = dir.path().join("sweep");
    let stdout = run_ok(&[
        "sweep",
        "--corpus",
        &corpus_arg(),
        "--out",
        out.to_str().unwrap(),
        "--grid",
        grid.to_str().unwrap(),
        "--losses",
        "pairwise",
    ]);
    assert!(stdout.contains("2 cells"), "margin-swept loss yields 2 cells: {stdout}");
    let cells = out.join("cells.json");
    assert!(cells.is_file());

    let reports = dir.path().join("reports");
    run_ok(&[
        "report",
        "heatmap",
        "--cells",
        cells.to_str().unwrap(),
        "--out-root",
        reports.to_str().unwrap(),
        "--run-id",
        "flow-heat",
    ]);
    let bundle = reports.join("flow-heat");
    for file in ["json/sweep.json", "json/meta.json", "tables/sweep.csv", "figures/sweep.png"] {
        assert!(bundle.join(file).is_file(), "missing {file}");
    }
}

#[test]
fn classifier_head_roundtrips_through_its_saved_file() {
    let dir = tempfile::tempdir().unwrap();
    let head = dir.path().join("head.json");
    let trained = run_ok(&[
        "classify",
        "train-head",
        "--corpus",
        &corpus_arg(),
        "--out",
        head.to_str().unwrap(),
        "--epochs",
        "30",
    ]);
    let evaluated = run_ok(&[
        "classify",
        "eval",
        "--corpus",
        &corpus_arg(),
        "--head",
        head.to_str().unwrap(),
    ]);
    let overall = |stdout: &str| -> String {
        stdout
            .lines()
            .find(|l| l.starts_with("overall"))
            .unwrap_or_else(|| panic!("missing overall row: {stdout}"))
            .to_string()
    };
    assert_eq!(
        overall(&trained),
        overall(&evaluated),
        "reloading the head must reproduce the training-time validation score"
    );
}

#[test]
fn evaluate_replays_a_recorded_cassette_and_scores_it() {
    let dir = tempfile::tempdir().unwrap();
    let eval_set = fixture("sample_eval_set.jsonl");
    let items = load_eval_set(&eval_set).unwrap();

    // Record traffic from a simulated model with a fixed stereotype
    // propensity; the CLI then replays the cassette offline.
    let simulated = PropensityEndpoint::new(items.clone(), 0.7, 99);
    let expected_stereotypes: usize = items
        .iter()
        .filter(|item| simulated.drawn_label(item) == Label::Stereotype)
        .count();
    let recording = RecordingEndpoint::new(simulated);
    let session = UnmaskSession::new(&recording, GenerationConfig::default()).unwrap();
    session.unmask_all(&items, 2).unwrap();
    let cassette_path = dir.path().join("traffic.json");
    recording.cassette().save(&cassette_path).unwrap();

    let out = dir.path().join("eval.json");
    let stdout = run_ok(&[
        "evaluate",
        "--eval-set",
        eval_set.to_str().unwrap(),
        "--cassette",
        cassette_path.to_str().unwrap(),
        "--cassette-mode",
        "replay",
        "--model-name",
        "simulated-model",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("model: simulated-model"), "{stdout}");

    let output: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(output["model"], "simulated-model");
    let report = &output["report"];
    let scored: u64 = report["per_category"]
        .as_object()
        .unwrap()
        .values()
        .map(|c| c["n_stereotype"].as_u64().unwrap())
        .sum();
    assert_eq!(
        scored as usize, expected_stereotypes,
        "majority verdicts must recover the simulated per-item draws exactly"
    );
    assert_eq!(report["overall"]["n_skipped"], 0);

    let markdown = std::fs::read_to_string(out.with_extension("md")).unwrap();
    assert!(markdown.contains("simulated-model"), "{markdown}");
}

#[test]
fn bias_table_report_merges_evaluation_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let eval_set = fixture("sample_eval_set.jsonl");
    let items = load_eval_set(&eval_set).unwrap();

    let mut inputs = Vec::new();
    for (name, q, seed) in [("model-even", 0.5, 7), ("model-skewed", 0.95, 8)] {
        let recording = RecordingEndpoint::new(PropensityEndpoint::new(items.clone(), q, seed));
        let session = UnmaskSession::new(&recording, GenerationConfig::default()).unwrap();
        session.unmask_all(&items, 2).unwrap();
        let cassette_path = dir.path().join(format!("{name}.cassette.json"));
        recording.cassette().save(&cassette_path).unwrap();

        let out = dir.path().join(format!("{name}.json"));
        run_ok(&[
            "evaluate",
            "--eval-set",
            eval_set.to_str().unwrap(),
            "--cassette",
            cassette_path.to_str().unwrap(),
            "--cassette-mode",
            "replay",
            "--model-name",
            name,
            "--out",
            out.to_str().unwrap(),
        ]);
        inputs.push(out);
    }

    let reports = dir.path().join("reports");
    run_ok(&[
        "report",
        "bias-table",
        "--input",
        inputs[0].to_str().unwrap(),
        "--input",
        inputs[1].to_str().unwrap(),
        "--out-root",
        reports.to_str().unwrap(),
        "--run-id",
        "flow-table",
    ]);
    let table = std::fs::read_to_string(reports.join("flow-table/tables/bias_table.md")).unwrap();
    assert!(table.contains("model-even"), "{table}");
    assert!(table.contains("model-skewed"), "{table}");
    assert!(reports.join("flow-table/tables/bias_table.csv").is_file());
}

#[test]
fn tsne_report_emits_the_full_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let reports = dir.path().join("reports");
    run_ok(&[
        "report",
        "tsne",
        "--corpus",
        &corpus_arg(),
        "--category",
        "gender",
        "--perplexity",
        "5",
        "--iterations",
        "250",
        "--out-root",
        reports.to_str().unwrap(),
        "--run-id",
        "flow-tsne",
    ]);
    let bundle = reports.join("flow-tsne");
    for file in ["json/tsne.json", "json/meta.json", "tables/tsne.csv", "figures/tsne.png"] {
        assert!(bundle.join(file).is_file(), "missing {file}");
    }
    let artifact: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle.join("json/tsne.json")).unwrap())
            .unwrap();
    assert_eq!(artifact["kind"], "tsne");
    assert_eq!(artifact["coordinates"].as_array().unwrap().len(), 12);
}

#[test]
fn evaluate_without_endpoint_or_cassette_is_rejected() {
    let output = stereoprobe(&[
        "evaluate",
        "--eval-set",
        fixture("sample_eval_set.jsonl").to_str().unwrap(),
        "--out",
        "/tmp/unused-eval.json",
    ]);
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("--model-endpoint"),
        "error must point at the missing flag: {stderr}"
    );
}
