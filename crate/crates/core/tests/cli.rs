use std::path::Path;

use irs_doa::harness::cli::cli_main;
use irs_doa::irs::EndToEndModel;
use irs_doa::rng::substream;
use irs_doa::SceneGeometry;

fn run(dir: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["irs-doa", "--output-dir", dir.to_str().unwrap()];
    argv.extend_from_slice(args);
    cli_main(argv)
}

#[test]
fn unknown_subcommand_and_flag_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert_ne!(run(dir.path(), &["frobnicate"]), 0);
    assert_ne!(run(dir.path(), &["flops", "--no-such-flag"]), 0);
    assert_ne!(run(dir.path(), &[]), 0);
}

#[test]
fn out_of_view_direction_is_a_geometry_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(dir.path(), &["crlb", "--theta", "120", "--phi", "10"]),
        1
    );
}

#[test]
fn flops_writes_csv_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--seed", "4", "flops"]), 0);
    let text = std::fs::read_to_string(dir.path().join("flops.csv")).unwrap();
    assert!(text.starts_with("# seed=4 config="));
    for m in ["ml-crlb-min", "ml-snr-max", "fc", "cnn", "proposed"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{m},"))), "{m}");
    }
}

#[test]
fn zero_epoch_training_exports_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, "seed = 9\n[dataset]\nn_train = 40\nsnapshots = 2\n").unwrap();
    let code = run(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "train", "--epochs", "0"],
    );
    assert_eq!(code, 0);
    let saved = std::fs::read_to_string(dir.path().join("model.txt")).unwrap();
    let init =
        EndToEndModel::new(&SceneGeometry::preset(), 2, &mut substream(9, "init", 0)).unwrap();
    assert_eq!(saved, init.to_text());
    let curve = std::fs::read_to_string(dir.path().join("learning_curve.csv")).unwrap();
    assert_eq!(curve.lines().filter(|l| !l.starts_with('#')).count(), 2);
}

#[test]
fn design_then_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(
            dir.path(),
            &["design-phases", "snr-max", "--theta", "35", "--phi", "60"]
        ),
        0
    );
    let phases = dir.path().join("phases_snr-max.txt");
    assert!(phases.exists());
    let args = [
        "estimate",
        "ml",
        "--theta",
        "35",
        "--phi",
        "60",
        "--snr-db",
        "30",
        "--phases",
        phases.to_str().unwrap(),
    ];
    assert_eq!(run(dir.path(), &args), 0);
    let text = std::fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    let row: Vec<f64> = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(
        (row[2] - 35.0).abs() <= 0.5 && (row[3] - 60.0).abs() <= 0.5,
        "{row:?}"
    );
}

#[test]
fn plot_renders_eval_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(
        &cfg,
        "[grid]\nstep = 3.0\n[eval]\nmethods = [\"ml-snr-max\"]\ntrials = 2\nsnr_set_db = [0.0, 10.0]\n",
    )
    .unwrap();
    assert_eq!(
        run(
            dir.path(),
            &["--config", cfg.to_str().unwrap(), "eval", "rmse-vs-snr"]
        ),
        0
    );
    assert_eq!(run(dir.path(), &["plot"]), 0);
    let svg = std::fs::read_to_string(dir.path().join("rmse_vs_snr.svg")).unwrap();
    assert!(svg.contains("ml-snr-max"));
}
