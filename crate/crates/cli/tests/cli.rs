use std::fs;
use std::path::Path;
use std::process::Command;

use fedxgb::data_io::{parse_libsvm, write_idx_images, write_idx_labels};
use fedxgb::group_math::GroupParams;
use fedxgb_cli::bench::{run_sweep, SweepConfig};
use fedxgb_cli::{cmd_compare, cmd_keygen, cmd_synth, cmd_train, CliError, DataFormat, ExperimentConfig};

fn toy(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        rows: Some(240),
        n_users: 4,
        rounds: 5,
        sec_param: 64,
        seed: 3,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedxgb"))
}

#[test]
fn train_writes_outputs_with_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path());
    let report = cmd_train(&cfg).unwrap();
    assert_eq!(report.aborted_trees, 0);
    let header = format!("# fedxgb train config_sha256={}\n", cfg.hash());
    for name in ["accuracy.csv", "metrics.csv", "model.txt", "config.toml"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.starts_with(&header), "{name}");
    }
    let acc = fs::read_to_string(dir.path().join("accuracy.csv")).unwrap();
    let lines: Vec<&str> = acc.lines().collect();
    assert_eq!(lines[1], "run_id,round,train_accuracy,test_accuracy,train_loss,test_loss");
    assert_eq!(lines.len(), 2 + 6);
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap().starts_with("run_id,round,entity,kind"));
    assert!(metrics.contains(",server,masked_vector,"));

    let echoed = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert_eq!(toml::from_str::<ExperimentConfig>(&echoed).unwrap(), cfg);
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { threshold: Some(5), ..toy(dir.path()) };
    assert!(matches!(cmd_train(&cfg), Err(CliError::Usage(_))));
    assert!(!dir.path().join("accuracy.csv").exists());
    let cfg = ExperimentConfig { dropout_rate: 1.0, ..toy(dir.path()) };
    assert!(matches!(cmd_compare(&cfg), Err(e) if e.exit_code() == 2));

    let out = bin().args(["train", "-n", "3", "-t", "4", "-o"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold"));
}

#[test]
fn compare_with_no_trees_has_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { rounds: 0, ..toy(dir.path()) };
    let r = cmd_compare(&cfg).unwrap();
    assert_eq!(r.delta_pp, 0.0);
    assert!(r.identical_models);
}

#[test]
fn compare_without_dropout_matches_centralized() {
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_compare(&toy(dir.path())).unwrap();
    assert!(r.identical_models);
    assert!(r.delta_pp.abs() <= 1.0);
}

#[test]
fn compare_with_dropout_reports_delta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { dropout_rate: 0.3, dropout_period: 1, ..toy(dir.path()) };
    let r = cmd_compare(&cfg).unwrap();
    assert!(r.delta_pp.is_finite());
    let summary = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with("identical_models"));
}

#[test]
fn toml_config_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, "n_users = 6\nrounds = 2\nseed = 11\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&path)
        .args(["--rounds", "1", "--rows", "120", "--sec-param", "64", "-o"])
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed: ExperimentConfig = toml::from_str(
        fs::read_to_string(dir.path().join("run/config.toml")).unwrap().split_once('\n').unwrap().1,
    )
    .unwrap();
    assert_eq!((echoed.n_users, echoed.rounds, echoed.seed, echoed.rows), (6, 1, 11, Some(120)));

    fs::write(&path, "users = 6\n").unwrap();
    let out = bin().args(["train", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn secagg_bench_rows_and_aborts() {
    let params = GroupParams::from_bytes(&{
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.bin");
        cmd_keygen(16, 1, &p).unwrap();
        fs::read(p).unwrap()
    })
    .unwrap();
    let sweep =
        SweepConfig { users: vec![10, 20], lengths: vec![50], rates: vec![0.0], ..SweepConfig::default() };
    let cells = run_sweep(&params, &sweep).unwrap();
    assert_eq!(cells.len(), 2);
    assert!(cells[1].server_sent > cells[0].server_sent);
    assert!(cells.iter().all(|c| c.max_error == Some(0.0) && !c.aborted));

    let strict =
        SweepConfig { users: vec![10], lengths: vec![5], rates: vec![0.5], threshold_fraction: 0.6, ..sweep };
    let cells = run_sweep(&params, &strict).unwrap();
    assert!(cells[0].aborted);
    assert_eq!(cells[0].max_error, None);
}

#[test]
fn secagg_bench_binary_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = bin()
            .args([
                "secagg-bench",
                "--users",
                "5,8",
                "--lengths",
                "4",
                "--rates",
                "0,0.5",
                "--sec-param",
                "16",
                "-o",
            ])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read_to_string(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert_eq!(a.lines().count(), 2 + 4);
    assert!(a.lines().any(|l| l.contains(",true,")));
}

#[test]
fn keygen_and_synth_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("keys/params.bin");
    let params = cmd_keygen(32, 4, &p).unwrap();
    assert_eq!(GroupParams::from_bytes(&fs::read(&p).unwrap()).unwrap(), params);
    assert_eq!(params.n.bits(), 32);
    assert!(matches!(cmd_keygen(8, 0, &p), Err(CliError::Usage(_))));

    let s = dir.path().join("adult.libsvm");
    cmd_synth(50, 2, &s).unwrap();
    let ds = parse_libsvm(&fs::read_to_string(&s).unwrap(), "adult").unwrap();
    assert_eq!(ds.len(), 50);
    assert!(ds.labels.iter().all(|&y| y == 1.0 || y == -1.0));

    let cfg = ExperimentConfig {
        format: DataFormat::Libsvm,
        dataset: Some(s),
        params_file: Some(p),
        rows: None,
        rounds: 2,
        n_users: 2,
        frac_bits: 8,
        ..toy(&dir.path().join("run"))
    };
    assert!(cmd_train(&cfg).unwrap().test_accuracy > 0.0);
}

#[test]
fn csv_dataset_trains() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut text = String::from("age,score,label\n");
    for i in 0..80 {
        text.push_str(&format!("{},{},{}\n", i % 13, (i * 7) % 10, u8::from(i % 13 > 6)));
    }
    fs::write(&path, text).unwrap();
    let cfg = ExperimentConfig {
        format: DataFormat::Csv,
        dataset: Some(path),
        rows: None,
        bins: 4,
        n_users: 2,
        ..toy(dir.path())
    };
    let r = cmd_compare(&cfg).unwrap();
    assert!(r.identical_models);
    assert!(r.federated_accuracy > 0.9);
}

#[test]
fn mnist_idx_runs_one_vs_rest() {
    let dir = tempfile::tempdir().unwrap();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..60u8 {
        let class = i % 3;
        let mut px = vec![0u8; 4];
        px[usize::from(class)] = 200 + i % 50;
        images.push(px);
        labels.push(class);
    }
    fs::write(dir.path().join("img.idx"), write_idx_images(&images, 2, 2)).unwrap();
    fs::write(dir.path().join("lbl.idx"), write_idx_labels(&labels)).unwrap();
    let cfg = ExperimentConfig {
        format: DataFormat::Mnist,
        dataset: Some(dir.path().join("img.idx")),
        labels: Some(dir.path().join("lbl.idx")),
        rows: None,
        rounds: 2,
        n_users: 3,
        ..toy(dir.path())
    };
    let r = cmd_compare(&cfg).unwrap();
    assert!(r.identical_models);
    assert_eq!(r.federated_accuracy, 1.0);
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.contains("-c2,"));
}
