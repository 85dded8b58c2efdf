use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rulkit::cli::{
    cmd_estimate, cmd_evaluate, cmd_export, cmd_grid_search, cmd_noise_sweep, cmd_train, ExportKind, RunConfig,
    EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL,
};
use rulkit::dataio::{read_series_csv, write_series_csv, MultivariateSeries};
use rulkit::seq2seq::{Checkpoint, Seq2SeqModel};
use rulkit::synth::{generate_fleet, SynthConfig};
use tempfile::TempDir;

fn fleet() -> Vec<MultivariateSeries> {
    generate_fleet(&SynthConfig {
        n_instances: 8,
        life_min: 60,
        life_max: 90,
        seed: 11,
        ..Default::default()
    })
    .unwrap()
}

/// Small, fast configuration rooted in `dir` with the fleet written to train.csv.
fn setup(dir: &Path) -> RunConfig {
    let train = dir.join("train.csv");
    write_series_csv(fs::File::create(&train).unwrap(), &fleet()).unwrap();
    let mut c = RunConfig::default();
    c.data.train = Some(train);
    c.data.out_dir = dir.join("out");
    c.preprocess.p = 0;
    c.model.c = 4;
    c.model.w = 10;
    c.model.d = 0.0;
    c.train.epochs = 1;
    c.train.stride = 5;
    c.train.learning_rate = 0.01;
    c.health.scorer = rulkit::pipeline::ScorerKind::Embed;
    c
}

/// Test instances that are exact lag-`lag` slices of training instances:
/// rows `lag..lag + len` of instance `i`, whose true RUL is `T - lag - len`.
fn write_slices(dir: &Path, lag: usize) -> (PathBuf, PathBuf, Vec<f64>) {
    let mut series = Vec::new();
    let mut ruls = Vec::new();
    for (i, s) in fleet().iter().enumerate() {
        let len = 20 + 3 * i;
        let rows = s.readings()[lag..lag + len].to_vec();
        let present = s.present()[lag..lag + len].to_vec();
        let ts = (0..len).map(|t| t as f64).collect();
        series.push(MultivariateSeries::new(format!("slice{i}"), ts, rows, present).unwrap());
        ruls.push((s.len() - lag - len) as f64);
    }
    let test = dir.join("test.csv");
    write_series_csv(fs::File::create(&test).unwrap(), &series).unwrap();
    let rul = dir.join("test_rul.txt");
    let text: String = ruls.iter().map(|r| format!("{r}\n")).collect();
    fs::write(&rul, text).unwrap();
    (test, rul, ruls)
}

fn write_report(dir: &Path, rows: &[(f64, f64)]) -> PathBuf {
    let mut text = String::from("instance,estimate,actual,error,fallback_used,n_candidates\n");
    for (i, (e, a)) in rows.iter().enumerate() {
        text += &format!("{i},{e},{a},{},false,1\n", e - a);
    }
    let p = dir.join("report.csv");
    fs::write(&p, text).unwrap();
    p
}

fn bin(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_rulkit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn save_config(c: &RunConfig, path: &Path) {
    fs::write(path, c.to_toml().unwrap()).unwrap();
}

#[test]
fn zero_epochs_checkpoint_is_initialization() {
    let dir = TempDir::new().unwrap();
    let mut c = setup(dir.path());
    c.train.epochs = 0;
    let s = cmd_train(&c).unwrap();
    assert_eq!(s.final_loss, None);
    let ck = Checkpoint::load(&s.checkpoint).unwrap();
    let init = Seq2SeqModel::new(c.pipeline().model_config(ck.model.config.sensors), c.train.seed).unwrap();
    assert_eq!(ck.model, init);
    let hist = fs::read_to_string(c.data.out_dir.join("loss_history.csv")).unwrap();
    assert_eq!(hist.trim(), "epoch,loss");
}

#[test]
fn same_seed_gives_identical_checkpoints_and_echo_reproduces() {
    let dir = TempDir::new().unwrap();
    let c = setup(dir.path());
    let a = fs::read(cmd_train(&c).unwrap().checkpoint).unwrap();
    let b = fs::read(cmd_train(&c).unwrap().checkpoint).unwrap();
    assert_eq!(a, b);

    let echo = c.data.out_dir.join("train.config.toml");
    let other = dir.path().join("rerun");
    let (code, stdout, err) = bin(
        &["-c", echo.to_str().unwrap(), "--out", other.to_str().unwrap(), "train"],
        dir.path(),
    );
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("final loss"));
    assert_eq!(fs::read(other.join("checkpoint.json")).unwrap(), a);
    assert_eq!(
        fs::read(other.join("loss_history.csv")).unwrap(),
        fs::read(c.data.out_dir.join("loss_history.csv")).unwrap()
    );
}

#[test]
fn evaluate_perfect_report() {
    let dir = TempDir::new().unwrap();
    let mut c = RunConfig::default();
    c.data.out_dir = dir.path().join("out");
    let m = cmd_evaluate(&c, &write_report(dir.path(), &[(5.0, 5.0), (20.0, 20.0), (1.0, 1.0)])).unwrap();
    assert_eq!((m.s, m.accuracy, m.mae, m.mse), (0.0, 100.0, 0.0, 0.0));
    assert_eq!((m.mape, m.fpr, m.fnr), (Some(0.0), 0.0, 0.0));
    assert!(c.data.out_dir.join("metrics.csv").exists());
}

#[test]
fn evaluate_two_rows_by_hand() {
    let dir = TempDir::new().unwrap();
    let report = write_report(dir.path(), &[(30.0, 20.0), (7.0, 20.0)]);
    let (code, stdout, err) = bin(
        &["--out", "o", "evaluate", "--report", report.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code, 0, "{err}");
    let value = |name: &str| -> f64 {
        let line = stdout.lines().find(|l| l.split_whitespace().next() == Some(name)).unwrap();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    // Late by 10 and early by 13: both sit on the accuracy boundary and
    // each costs e - 1 under the default tau1 = 13, tau2 = 10.
    let e1 = std::f64::consts::E - 1.0;
    assert!((value("S") - 2.0 * e1).abs() < 1e-3);
    assert_eq!(value("A"), 100.0);
    assert_eq!(value("MAE"), 11.5);
    assert_eq!(value("MSE"), 134.5);
    assert!((value("MAPE") - 57.5).abs() < 1e-9);

    let (code, stdout, _) = bin(
        &["--out", "o", "evaluate", "--report", report.to_str().unwrap(), "--tau2", "9"],
        dir.path(),
    );
    assert_eq!(code, 0);
    let fnr: f64 = stdout
        .lines()
        .find(|l| l.starts_with("FNR"))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(fnr, 50.0);
}

#[test]
fn estimate_recovers_lag_slices_exactly() {
    let dir = TempDir::new().unwrap();
    let mut c = setup(dir.path());
    cmd_train(&c).unwrap();
    let (test, rul, ruls) = write_slices(dir.path(), 7);
    c.data.test = Some(test);
    c.data.test_rul = Some(rul);
    c.rul.alpha = 1.0;
    c.rul.r_max = 1e6;
    let rows = cmd_estimate(&c).unwrap();
    assert_eq!(rows.len(), ruls.len());
    for (r, want) in rows.iter().zip(&ruls) {
        assert_eq!(r.actual, Some(*want));
        assert_eq!(r.estimate, Some(*want), "{}", r.instance);
    }
}

#[test]
fn estimate_cadence_reports_every_third_step() {
    let dir = TempDir::new().unwrap();
    let mut c = setup(dir.path());
    cmd_train(&c).unwrap();
    let (test, rul, ruls) = write_slices(dir.path(), 3);
    c.data.test = Some(test);
    c.data.test_rul = Some(rul);
    c.estimate.cadence = Some(3);
    let rows = cmd_estimate(&c).unwrap();
    let first: Vec<&str> = rows
        .iter()
        .filter(|r| r.instance.starts_with("slice0@"))
        .map(|r| r.instance.as_str())
        .collect();
    assert_eq!(first, ["slice0@3", "slice0@6", "slice0@9", "slice0@12", "slice0@15", "slice0@18"]);
    let r = rows.iter().find(|r| r.instance == "slice0@12").unwrap();
    assert_eq!(r.actual, Some(ruls[0] + 8.0));
    assert!(r.estimate.is_some());
    assert!(rows.iter().find(|r| r.instance == "slice0@6").unwrap().estimate.is_none());
}

#[test]
fn estimate_dimension_mismatch_is_config_error() {
    let dir = TempDir::new().unwrap();
    let c = setup(dir.path());
    cmd_train(&c).unwrap();
    let wide: Vec<MultivariateSeries> = generate_fleet(&SynthConfig {
        n_instances: 2,
        sensors: 5,
        ..Default::default()
    })
    .unwrap();
    let test = dir.path().join("wide.csv");
    write_series_csv(fs::File::create(&test).unwrap(), &wide).unwrap();
    let cfg = dir.path().join("run.toml");
    save_config(&c, &cfg);
    let (code, _, err) = bin(
        &["-c", cfg.to_str().unwrap(), "estimate", "--test", test.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code, EXIT_CONFIG, "{err}");
    assert!(err.contains("sensors"), "{err}");
}

#[test]
fn noise_sweep_at_zero_matches_plain_estimate() {
    let dir = TempDir::new().unwrap();
    let mut c = setup(dir.path());
    cmd_train(&c).unwrap();
    let (test, rul, _) = write_slices(dir.path(), 5);
    c.data.test = Some(test);
    c.data.test_rul = Some(rul);
    cmd_estimate(&c).unwrap();
    let plain = cmd_evaluate(&c, &c.data.out_dir.join("rul_report.csv")).unwrap();

    c.noise.sigmas = vec![0.0];
    let sweep = cmd_noise_sweep(&c).unwrap();
    assert_eq!(sweep.rows[0].mse, plain.mse);
    assert_eq!(sweep.rows[0].s, plain.s);
    assert_eq!(sweep.std, (0.0, 0.0));

    c.noise.sigmas = vec![0.0, 0.3];
    let sweep = cmd_noise_sweep(&c).unwrap();
    let text = fs::read_to_string(c.data.out_dir.join("noise_sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sigma,mse,s");
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("mean,"));
    assert!(lines[4].starts_with("std,"));
    let half_gap = (sweep.rows[0].mse - sweep.rows[1].mse).abs() / 2.0;
    assert!((sweep.std.0 - half_gap).abs() < 1e-9 * half_gap.max(1.0));
}

#[test]
fn grid_single_point_returns_that_config() {
    let dir = TempDir::new().unwrap();
    let mut c = setup(dir.path());
    c.grid.values.insert("alpha".into(), vec![toml::Value::Float(0.9)]);
    c.grid.truncations = 2;
    let g = cmd_grid_search(&c).unwrap();
    assert_eq!(g.cells.len(), 1);
    assert_eq!(g.best().config.rul.alpha, 0.9);
    let best = RunConfig::load(&c.data.out_dir.join("best.config.toml")).unwrap();
    assert_eq!(best.rul.alpha, 0.9);
    let results = fs::read_to_string(c.data.out_dir.join("grid_results.csv")).unwrap();
    assert_eq!(results.lines().count(), 2);
}

#[test]
fn grid_picks_the_oracle_perfect_cell() {
    let dir = TempDir::new().unwrap();
    let mut c = setup(dir.path());
    let (test, rul, _) = write_slices(dir.path(), 8);
    c.data.test = Some(test);
    c.data.test_rul = Some(rul);
    c.rul.alpha = 1.0;
    c.rul.r_max = 1e6;
    // Lag 8 is out of reach with tau = 4 and exact with tau = 12.
    c.grid
        .values
        .insert("tau".into(), vec![toml::Value::Integer(4), toml::Value::Integer(12)]);
    let g = cmd_grid_search(&c).unwrap();
    assert_eq!(g.cells.len(), 2);
    assert!(g.cells[0].objective > 0.0);
    assert_eq!(g.cells[1].objective, 0.0);
    assert_eq!(g.best, 1);
    assert_eq!(g.best().config.rul.tau, 12);
    let results = fs::read_to_string(c.data.out_dir.join("grid_results.csv")).unwrap();
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("cell,tau,objective"));
}

#[test]
fn export_embeddings_have_one_column_per_unit() {
    let dir = TempDir::new().unwrap();
    let mut c = setup(dir.path());
    c.model.c = 55;
    c.train.epochs = 0;
    cmd_train(&c).unwrap();
    let (path, n) = cmd_export(&c, ExportKind::Embeddings, None).unwrap();
    let text = fs::read_to_string(path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 57);
    assert_eq!(&header[..3], ["instance", "t", "z1"]);
    let expected: usize = fleet().iter().map(|s| s.len() - c.model.w + 1).sum();
    assert_eq!(n, expected);
    assert_eq!(text.lines().count(), expected + 1);
}

#[test]
fn export_hi_curves_row_count() {
    let dir = TempDir::new().unwrap();
    let c = setup(dir.path());
    cmd_train(&c).unwrap();
    let (path, n) = cmd_export(&c, ExportKind::HiCurves, None).unwrap();
    let expected: usize = fleet().iter().map(|s| s.len() - c.model.w + 1).sum();
    assert_eq!(n, expected);
    let text = fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "instance,t,hi");
    assert_eq!(text.lines().count(), expected + 1);
}

#[test]
fn export_reconstructions_roundtrip() {
    let dir = TempDir::new().unwrap();
    let c = setup(dir.path());
    cmd_train(&c).unwrap();
    let (path, n) = cmd_export(&c, ExportKind::Reconstructions, None).unwrap();
    let back = read_series_csv(fs::File::open(&path).unwrap()).unwrap();
    let windows: usize = fleet().iter().map(|s| s.len() - c.model.w + 1).sum();
    assert_eq!(back.len(), windows);
    assert_eq!(n, windows * c.model.w);
    assert!(back.iter().all(|s| s.len() == c.model.w && s.dim() == 3));
    let mut again = Vec::new();
    write_series_csv(&mut again, &back).unwrap();
    assert_eq!(again, fs::read(&path).unwrap());
}

#[test]
fn synth_then_train_via_binary() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[data]\ntrain = \"out/train.csv\"\n[preprocess]\np = 0\n[model]\nc = 3\nw = 8\n\
         [train]\nepochs = 1\nstride = 8\n[synth]\nn_instances = 5\nlife_min = 40\nlife_max = 50\n\
         test_fraction = 0.4\n",
    )
    .unwrap();
    let (code, stdout, err) = bin(&["-c", "run.toml", "synth"], dir.path());
    assert_eq!(code, 0, "{err}");
    assert_eq!(stdout.lines().count(), 3);
    let ruls = fs::read_to_string(dir.path().join("out/test_rul.txt")).unwrap();
    assert_eq!(ruls.lines().count(), 2);
    let (code, _, err) = bin(&["-c", "run.toml", "train"], dir.path());
    assert_eq!(code, 0, "{err}");
    assert!(dir.path().join("out/checkpoint.json").exists());
    assert!(dir.path().join("out/synth.config.toml").exists());
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = TempDir::new().unwrap();
    let c = setup(dir.path());
    let cfg = dir.path().join("run.toml");
    save_config(&c, &cfg);
    let cfg = cfg.to_str().unwrap();

    let (code, _, err) = bin(&["-c", cfg, "--set", "no_such_key=1", "train"], dir.path());
    assert_eq!(code, EXIT_CONFIG, "{err}");
    let (code, _, _) = bin(&["-c", cfg, "--set", "alpha=1.5", "train"], dir.path());
    assert_eq!(code, EXIT_CONFIG);
    let (code, _, _) = bin(&["-c", cfg, "train", "--train", "missing.csv"], dir.path());
    assert_eq!(code, EXIT_DATA);
    fs::write(dir.path().join("bad.csv"), "instance,timestamp,a\n1,0,x\n").unwrap();
    let (code, _, err) = bin(&["-c", cfg, "train", "--train", "bad.csv"], dir.path());
    assert_eq!(code, EXIT_DATA, "{err}");
    let (code, _, err) = bin(
        &["-c", cfg, "--set", "learning_rate=1e300", "--set", "clip=1e300", "train"],
        dir.path(),
    );
    assert_eq!(code, EXIT_NUMERICAL, "{err}");
    let (code, _, _) = bin(&["frobnicate"], dir.path());
    assert_eq!(code, EXIT_CONFIG);
}
