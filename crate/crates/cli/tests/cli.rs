use std::fs;
use std::path::{Path, PathBuf};

use impress_cli::{run_command, EvalReport, SummaryReport};
use impress_core::io::{read_dataset, read_pgm};
use impress_core::world::invert_with_restoration;
use impress_core::{AttributeKind, ModelBundle};

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("impress").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset and a quickly trained trust bundle. The identity
/// threshold is disabled so the barely trained encoder keeps every face.
fn tiny_pipeline(dir: &Path, world_seed: &str) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let bundle = dir.join("model.bundle");
    assert_eq!(
        run(&[
            "gen-data",
            "--n",
            "80",
            "--seed",
            "3",
            "--world-seed",
            world_seed,
            "--identity-threshold",
            "-1",
            "--out",
            s(&data)
        ]),
        0
    );
    assert_eq!(
        run(&[
            "train-attr",
            "--attr",
            "trust",
            "--data",
            s(&data),
            "--iters",
            "30",
            "--encoder-iters",
            "60",
            "--corrector-iters",
            "20",
            "--corrector-pool",
            "40",
            "--out",
            s(&bundle),
        ]),
        0
    );
    assert_eq!(
        run(&[
            "train-mapper",
            "--attr",
            "trust",
            "--data",
            s(&data),
            "--iters",
            "5",
            "--hidden",
            "8",
            "--blocks",
            "1",
            "--out",
            s(&bundle)
        ]),
        0
    );
    (data, bundle)
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["gen-data", "--bogus"]), 2);
    assert_eq!(
        run(&[
            "spectrum", "--image", "a", "--attr", "trust", "--bundle", "b", "--out", "c",
            "--range", "0:1"
        ]),
        2
    );
    assert_eq!(run(&["--version"]), 0);
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(
        run(&[
            "train-attr",
            "--attr",
            "dominance",
            "--data",
            s(&missing),
            "--out",
            s(&dir.path().join("b"))
        ]),
        1
    );
    let junk = dir.path().join("junk.bundle");
    fs::write(&junk, b"IMPBNDL1 not really").unwrap();
    assert_eq!(
        run(&[
            "eval",
            "--set",
            s(&missing),
            "--bundle",
            s(&junk),
            "--report",
            s(&dir.path().join("r.json"))
        ]),
        1
    );
}

#[test]
fn pipeline_artifacts_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let (data, bundle_path) = tiny_pipeline(dir.path(), "7");
    let bundle = ModelBundle::load(&bundle_path).unwrap();
    assert!(bundle.flow(AttributeKind::Trustworthiness).is_ok());
    assert!(bundle.run_log.contains_key("encoder"));
    assert!(bundle.run_log.contains_key("mapper:trustworthiness"));

    // edit with a zero delta reproduces the restored reconstruction
    let img = data.join("img/000000.pgm");
    let out = dir.path().join("edited.pgm");
    assert_eq!(
        run(&[
            "edit",
            "--image",
            s(&img),
            "--attr",
            "trust",
            "--delta",
            "0",
            "--bundle",
            s(&bundle_path),
            "--out",
            s(&out)
        ]),
        0
    );
    let x = read_pgm(&img).unwrap();
    let recon = invert_with_restoration(
        &bundle.encoder,
        &bundle.mixing,
        &bundle.encoder.encode(&x).unwrap(),
        &x,
    )
    .unwrap();
    let edited = read_pgm(&out).unwrap();
    let worst = edited
        .pixels()
        .iter()
        .zip(recon.pixels())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(
        worst <= 0.5 / 255.0 + 1e-3,
        "worst pixel difference {worst}"
    );

    // a regressor for a second attribute reuses the encoder
    assert_eq!(
        run(&[
            "train-attr",
            "--attr",
            "dom",
            "--data",
            s(&data),
            "--iters",
            "5",
            "--out",
            s(&bundle_path)
        ]),
        0
    );
    let again = ModelBundle::load(&bundle_path).unwrap();
    assert_eq!(again.encoder, bundle.encoder);
    assert!(again.flow(AttributeKind::Trustworthiness).is_ok());
    assert!(again.flow(AttributeKind::Dominance).is_err());

    // spectrum artifacts
    let prefix = dir.path().join("spec");
    assert_eq!(
        run(&[
            "spectrum",
            "--image",
            s(&img),
            "--attr",
            "trust",
            "--range",
            "-0.2:0.2:0.1",
            "--bundle",
            s(&bundle_path),
            "--out",
            s(&prefix)
        ]),
        0
    );
    assert_eq!(
        read_pgm(&dir.path().join("spec.pgm")).unwrap().width(),
        5 * 32 + 4
    );
    assert_eq!(
        read_pgm(&dir.path().join("spec.af.pgm")).unwrap().width(),
        4 * 32 + 3
    );
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("spec.json")).unwrap()).unwrap();
    assert_eq!(side["diffs"].as_array().unwrap().len(), 4);
    assert_eq!(side["run_config_hash"].as_str().unwrap().len(), 64);

    // eval report, then summary
    let report_path = dir.path().join("eval.json");
    assert_eq!(
        run(&[
            "eval",
            "--set",
            s(&data),
            "--deltas",
            "-0.2,-0.1,0.1,0.2",
            "--bundle",
            s(&bundle_path),
            "--report",
            s(&report_path),
            "--limit",
            "5"
        ]),
        0
    );
    let text = fs::read_to_string(&report_path).unwrap();
    assert!(
        !text.contains(s(dir.path())),
        "report leaks an absolute path"
    );
    let report: EvalReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.items, 5);
    assert_eq!(report.lambdas, vec![-0.2, -0.1, 0.0, 0.1, 0.2]);
    assert!(
        report.warnings.iter().any(|w| w.contains("bias")),
        "20 edits cannot feed the bias report"
    );
    let trust = &report.attributes[0];
    assert_eq!(trust.attribute, AttributeKind::Trustworthiness);
    assert_eq!(trust.metrics.pairs.len(), 4);
    assert_eq!(
        trust.metrics.config_hash.as_deref(),
        Some(report.run_config_hash.as_str())
    );
    assert!(trust.metrics.versions.contains_key("IMPBNDL1"));
    assert_eq!(trust.direction_edits, 20);
    assert_eq!(trust.score_histogram.total, 5);
    assert!(report.bias.is_none());

    let summary_path = dir.path().join("summary.json");
    assert_eq!(
        run(&[
            "report",
            "--inputs",
            s(&report_path),
            "--out",
            s(&summary_path)
        ]),
        0
    );
    let summary: SummaryReport =
        serde_json::from_str(&fs::read_to_string(&summary_path).unwrap()).unwrap();
    assert_eq!(summary.rows.len(), 1);
    assert_eq!(summary.rows[0].adas, trust.metrics.adas);
    let md = dir.path().join("summary.md");
    assert_eq!(
        run(&["report", "--inputs", s(&report_path), "--out", s(&md)]),
        0
    );
    assert!(fs::read_to_string(&md).unwrap().starts_with("| source |"));
}

#[test]
fn world_mismatch_is_an_error_for_training_and_a_warning_for_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (_, bundle) = tiny_pipeline(dir.path(), "7");
    let other = dir.path().join("other");
    assert_eq!(
        run(&[
            "gen-data",
            "--n",
            "40",
            "--seed",
            "4",
            "--world-seed",
            "8",
            "--identity-threshold",
            "-1",
            "--out",
            s(&other)
        ]),
        0
    );
    assert_eq!(
        run(&[
            "train-attr",
            "--attr",
            "trust",
            "--data",
            s(&other),
            "--iters",
            "2",
            "--out",
            s(&bundle)
        ]),
        1
    );
    assert_eq!(
        run(&[
            "train-mapper",
            "--attr",
            "trust",
            "--data",
            s(&other),
            "--iters",
            "2",
            "--out",
            s(&bundle)
        ]),
        1
    );
    let report = dir.path().join("r.json");
    assert_eq!(
        run(&[
            "eval",
            "--set",
            s(&other),
            "--bundle",
            s(&bundle),
            "--report",
            s(&report),
            "--limit",
            "8"
        ]),
        0
    );
    let r: EvalReport = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r.warnings.iter().any(|w| w.contains("hash mismatch")));
    assert!(r.attributes[0]
        .metrics
        .warnings
        .iter()
        .any(|w| w.contains("hash mismatch")));
    assert_ne!(r.bundle_config_hash, r.data_config_hash);
}

#[test]
fn identical_runs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for dir in [a.path(), b.path()] {
        let (data, bundle) = tiny_pipeline(dir, "7");
        let report = dir.join("eval.json");
        assert_eq!(
            run(&[
                "eval",
                "--set",
                s(&data),
                "--bundle",
                s(&bundle),
                "--report",
                s(&report),
                "--limit",
                "8"
            ]),
            0
        );
        outputs.push([
            fs::read(&bundle).unwrap(),
            fs::read(&report).unwrap(),
            fs::read(data.join("dataset.tsv")).unwrap(),
        ]);
    }
    assert!(outputs[0] == outputs[1]);
    assert_eq!(read_dataset(&a.path().join("data")).unwrap().len(), 80);
}
