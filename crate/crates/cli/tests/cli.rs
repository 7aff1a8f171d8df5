use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chlu::io::{save_checkpoint, Provenance};
use chlu::{ChluModel, KineticGovernor, PotentialNet};

fn chlu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chlu"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn planar_checkpoint(dir: &Path, weights: Vec<f64>) -> PathBuf {
    let net = PotentialNet::linear(weights, 0.0);
    let m = ChluModel::new(KineticGovernor::new(2, 1.0, 1.0).unwrap(), net, 0.1).unwrap();
    let path = p(dir, "model.toml");
    save_checkpoint(&m, &Provenance::default(), &path).unwrap();
    path
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&chlu(&["--help"])), 0);
    assert_eq!(code(&chlu(&["--version"])), 0);
    assert_eq!(code(&chlu(&[])), 1);
    assert_eq!(code(&chlu(&["rollout", "--bogus"])), 1);
    assert_eq!(code(&chlu(&["check", "nonsense"])), 1);
    let help = chlu(&["train", "--help"]);
    assert_eq!(code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout);
    assert!(text.contains("beta_cd") && text.contains("layer_dims"), "{text}");
}

#[test]
fn gen_data_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, extra) in [("lemniscate", vec![]), ("sine", vec!["--count", "3", "--length", "50"]), ("glyphs", vec!["--count", "20"])] {
        let a = p(dir.path(), &format!("{kind}-a"));
        let b = p(dir.path(), &format!("{kind}-b"));
        for out in [&a, &b] {
            let mut args = vec!["gen-data", kind, "--seed", "5", "--out", s(out)];
            args.extend(&extra);
            assert_eq!(code(&chlu(&args)), 0);
        }
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap(), "{kind}");
    }
}

#[test]
fn check_suite_prints_summary_lines() {
    let o = chlu(&["check", "velocity-bound", "--seed", "2"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.starts_with("check=velocity-bound ") && l.contains("status=pass")), "{text}");
}

#[test]
fn rollout_and_probe_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = planar_checkpoint(dir.path(), vec![0.2, -0.1]);
    let mut outs = Vec::new();
    for name in ["r1.csv", "r2.csv"] {
        let out = p(dir.path(), name);
        let args = ["rollout", "--ckpt", s(&ckpt), "--init", "lemniscate-start", "--steps", "40", "--epsilon", "0.05", "--out", s(&out), "--verify"];
        assert_eq!(code(&chlu(&args)), 0);
        outs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(String::from_utf8_lossy(&outs[0]).lines().count(), 42);

    // start from a row of the file just written
    let from_row = format!("{}#3", s(&p(dir.path(), "r1.csv")));
    let out = p(dir.path(), "r3.csv");
    assert_eq!(code(&chlu(&["rollout", "--ckpt", s(&ckpt), "--init", &from_row, "--steps", "2", "--epsilon", "0.05", "--out", s(&out)])), 0);

    let grid = p(dir.path(), "grid.csv");
    assert_eq!(code(&chlu(&["probe", "--ckpt", s(&ckpt), "--grid=-1:1:7", "--out", s(&grid)])), 0);
    let text = fs::read_to_string(&grid).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x,y,V,fx,fy");
    assert_eq!(text.lines().count(), 50);
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = planar_checkpoint(dir.path(), vec![1e11, 0.0]);
    let out = p(dir.path(), "r.csv");
    let o = chlu(&["rollout", "--ckpt", s(&ckpt), "--init", "lemniscate-start", "--steps", "1000", "--epsilon", "0.05", "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn failed_verification_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = PotentialNet::<f64>::init(&[2, 2, 1], 0).unwrap();
    net.layers[1].weights = vec![1e308, 1e308];
    net.layers[0].bias = vec![50.0, 50.0];
    let m = ChluModel::new(KineticGovernor::new(2, 1.0, 1.0).unwrap(), net, 0.0).unwrap();
    let ckpt = p(dir.path(), "bad.toml");
    save_checkpoint(&m, &Provenance::default(), &ckpt).unwrap();
    let o = chlu(&["probe", "--ckpt", s(&ckpt), "--grid", "0:1:2", "--out", s(&p(dir.path(), "g.csv")), "--verify"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("status=fail"));
}

#[test]
fn probe_rejects_non_planar_models() {
    let dir = tempfile::tempdir().unwrap();
    let m = ChluModel::new(KineticGovernor::new(3, 1.0, 1.0).unwrap(), PotentialNet::linear(vec![0.0; 3], 0.0), 0.0).unwrap();
    let ckpt = p(dir.path(), "m3.toml");
    save_checkpoint(&m, &Provenance::default(), &ckpt).unwrap();
    let o = chlu(&["probe", "--ckpt", s(&ckpt), "--out", s(&p(dir.path(), "g.csv"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("probe requires 2-dimensional latent"));
}

#[test]
fn training_and_generation_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "lem.csv");
    assert_eq!(code(&chlu(&["gen-data", "lemniscate", "--cycles", "1", "--out", s(&data)])), 0);
    let cfg = p(dir.path(), "cfg.toml");
    fs::write(&cfg, "[train]\nepochs = 1\nbatch_size = 8\n").unwrap();
    let mut ckpts = Vec::new();
    for name in ["a.toml", "b.toml"] {
        let out = p(dir.path(), name);
        let args = ["train", "lemniscate", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)];
        assert_eq!(code(&chlu(&args)), 0);
        ckpts.push(fs::read(&out).unwrap());
    }
    assert_eq!(ckpts[0], ckpts[1]);
    let literal = p(dir.path(), "lit.toml");
    let args = ["train", "lemniscate", "--data", s(&data), "--config", s(&cfg), "--out", s(&literal), "--alg1-literal"];
    assert_eq!(code(&chlu(&args)), 0);
    assert!(fs::read_to_string(&literal).unwrap().contains("beta_mse = 0.0"));

    let glyphs = p(dir.path(), "glyphs.idx");
    assert_eq!(code(&chlu(&["gen-data", "glyphs", "--count", "40", "--out", s(&glyphs)])), 0);
    fs::write(&cfg, "image_count = 32\n[train]\nepochs = 1\nwake_steps = 2\nsleep_steps = 2\n").unwrap();
    let img = p(dir.path(), "img.toml");
    assert_eq!(code(&chlu(&["train", "images", "--data", s(&glyphs), "--config", s(&cfg), "--out", s(&img)])), 0);
    let mut dirs = Vec::new();
    for name in ["g1", "g2"] {
        let out = p(dir.path(), name);
        let args = [
            "generate", "--ckpt", s(&img), "--data", s(&glyphs), "--held-out-from", "32", "--steps", "20", "--count", "4",
            "--snapshot-every", "10", "--seed", "3", "--out-dir", s(&out),
        ];
        let o = chlu(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        dirs.push(out);
    }
    for f in ["energy.csv", "step_0000.pgm", "step_0010.pgm", "step_0020.pgm", "summary.toml"] {
        assert_eq!(fs::read(dirs[0].join(f)).unwrap(), fs::read(dirs[1].join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(dirs[0].join("summary.toml")).unwrap();
    assert!(summary.contains("nearest_distance_final"));
}
