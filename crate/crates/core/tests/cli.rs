use std::fs;
use std::path::Path;
use std::process::Command;

use promptgen::cli::run_with;
use promptgen::io::checkpoint::Checkpoint;
use promptgen::io::ppm::read_image;

fn run(args: &[&str]) -> (i32, String, String) {
    let argv: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(&argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

const TINY_DATA: &[&str] = &["--images-per-class", "4", "--image-size", "8", "--patch", "4", "--codebook", "6"];
const TINY_MODEL: &[&str] = &["--layers", "1", "--dim", "16", "--heads", "2", "--epochs", "2"];

fn pretrain_tiny(dir: &Path) -> String {
    let ckpt = path(dir, "source.ckpt");
    let mut args = vec!["pretrain", "--out", &ckpt, "--classes", "2"];
    args.extend(TINY_DATA);
    args.extend(TINY_MODEL);
    let (code, out, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    let log: Vec<&str> = out.lines().collect();
    assert_eq!(log.len(), 2);
    assert!(log[1].starts_with("2,"));
    assert_eq!(log[1].split(',').count(), 3);
    ckpt
}

fn prompt_tune_tiny(dir: &Path, source: &str) -> String {
    let ckpt = path(dir, "tuned.ckpt");
    let mut args = vec![
        "transfer", "--mode", "prompt", "--source", source, "--out", &ckpt, "--classes", "2", "--instance", "true",
        "--prompt-len", "2", "--prompt-hidden", "4",
    ];
    args.extend(TINY_DATA);
    args.extend(["--epochs", "2"]);
    let (code, _, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    ckpt
}

#[test]
fn inspect_reports_factorized_count() {
    let (code, out, _) = run(&["inspect", "--prompt-config", "P=768,D=768,C=100,S=128,F=1"]);
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "764928");
    let (_, out, _) = run(&["inspect", "--prompt-config", "P=768,D=768,C=100,S=128,kind=baseline"]);
    assert_eq!(out.trim(), "10420224");
}

#[test]
fn prompt_transfer_without_source_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "x.ckpt");
    let (code, _, err) = run(&["transfer", "--mode", "prompt", "--out", &out]);
    assert_eq!(code, 1);
    assert!(err.contains("--source"), "{err}");
    assert!(!dir.path().join("x.ckpt").exists());
}

#[test]
fn unknown_flags_and_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["inspect", "--prompt-confg", "P=1"]);
    assert_eq!(code, 1);
    assert!(err.contains("prompt-confg"));
    let config = path(dir.path(), "run.cfg");
    fs::write(&config, "epochs=2\nlearnig_rate=0.1\n").unwrap();
    let out = path(dir.path(), "x.ckpt");
    let (code, _, err) = run(&["pretrain", "--out", &out, "--config", &config]);
    assert_eq!(code, 1);
    assert!(err.contains("learnig_rate"), "{err}");
}

#[test]
fn missing_checkpoint_is_a_runtime_failure() {
    let (code, _, err) = run(&["inspect", "--checkpoint", "/nonexistent/model.ckpt"]);
    assert_eq!(code, 2);
    assert!(!err.is_empty());
}

#[test]
fn pretrain_transfer_generate_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let source = pretrain_tiny(dir.path());
    let tuned = prompt_tune_tiny(dir.path(), &source);

    let before = Checkpoint::load(&source).unwrap();
    let after = Checkpoint::load(&tuned).unwrap();
    for (id, p) in before.model.params.iter() {
        let q = after.model.params.id(&p.name).unwrap_or_else(|| panic!("{} missing", p.name));
        assert_eq!(before.model.params.value(id).data(), after.model.params.value(q).data(), "{}", p.name);
    }

    let (code, out, _) = run(&["inspect", "--checkpoint", &tuned]);
    assert_eq!(code, 0);
    assert!(out.contains("kind=nar"));
    assert!(out.contains("frozen="));

    let grid = path(dir.path(), "grid.ppm");
    let (code, _, err) = run(&["generate", "--checkpoint", &tuned, "--out", &grid, "--samples", "3", "--steps", "2"]);
    assert_eq!(code, 0, "{err}");
    let image = read_image(&grid).unwrap();
    assert_eq!((image.width(), image.height()), (24, 16));
    let index = fs::read_to_string(dir.path().join("grid.txt")).unwrap();
    assert_eq!(index.lines().count(), 7);

    let marquee = path(dir.path(), "marquee.ppm");
    let (code, _, err) = run(&[
        "generate", "--checkpoint", &tuned, "--out", &marquee, "--samples", "2", "--steps", "4", "--marquee",
        "cond1=instance:0,cond2=instance:5,tcutoff=3",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(fs::read_to_string(dir.path().join("marquee.txt")).unwrap().contains("marquee:"));

    let (code, _, _) = run(&[
        "generate", "--checkpoint", &source, "--out", &marquee, "--marquee", "cond1=class:0,cond2=class:1,tcutoff=3",
    ]);
    assert_eq!(code, 1);

    let report = path(dir.path(), "report.csv");
    let (code, out, err) = run(&[
        "eval", "--checkpoint", &tuned, "--classes", "2", "--images-per-class", "4", "--image-size", "8", "--samples",
        "3", "--steps", "2", "--report", &report,
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("frechet="));
    assert!(out.contains("nmi="));
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("frechet,diversity"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = pretrain_tiny(a.path());
    let cb = pretrain_tiny(b.path());
    assert_eq!(fs::read(&ca).unwrap(), fs::read(&cb).unwrap());
    let mut grids = Vec::new();
    for dir in [&a, &b] {
        let grid = path(dir.path(), "g.ppm");
        let ckpt = path(dir.path(), "source.ckpt");
        let (code, _, err) = run(&["generate", "--checkpoint", &ckpt, "--out", &grid, "--seed", "4", "--steps", "3"]);
        assert_eq!(code, 0, "{err}");
        grids.push(fs::read(&grid).unwrap());
    }
    assert_eq!(grids[0], grids[1]);
}

#[test]
fn binary_reports_usage_and_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_promptgen");
    let help = Command::new(bin).arg("help").output().unwrap();
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("usage: promptgen"));
    let bad = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let inspect = Command::new(bin)
        .args(["inspect", "--prompt-config", "P=768,D=1024,C=100,S=256,F=16"])
        .output()
        .unwrap();
    assert_eq!(String::from_utf8_lossy(&inspect.stdout).trim(), "5160960");
}
