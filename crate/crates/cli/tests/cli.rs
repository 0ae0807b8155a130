use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn lungwarp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lungwarp"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn hashes(dir: &Path) -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let h = Sha256::digest(fs::read(&p).unwrap());
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), format!("{h:x}")));
            }
        }
    }
    out.sort();
    out
}

const FAST: [&str; 6] = [
    "--no-augment",
    "--k-b-relative",
    "1e-2",
    "--lambda",
    "1e-3",
    "--no-meshes",
];

fn synth(dir: &Path, cases: &str) -> PathBuf {
    let o = lungwarp(
        &[
            "synth",
            "--seed",
            "7",
            "--cases",
            cases,
            "--vertices",
            "80",
            "-o",
            "cohort",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("cohort/manifest.json")
}

#[test]
fn synth_rejects_zero_cases() {
    let dir = tempfile::tempdir().unwrap();
    let o = lungwarp(&["synth", "--cases", "0", "-o", "c"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("c").exists());
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = synth(a.path(), "9");
    synth(b.path(), "9");
    let ha = hashes(&a.path().join("cohort"));
    assert_eq!(ha, hashes(&b.path().join("cohort")));
    let dirs = fs::read_dir(m.parent().unwrap())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(dirs, 9);
    assert_eq!(ha.len(), 9 * 4 + 1);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lungwarp(&["evaluate", "--bogus"], dir.path())), 2);
    assert_eq!(code(&lungwarp(&["evaluate"], dir.path())), 2);
    assert_eq!(
        code(&lungwarp(&["evaluate", "--methods", "splines"], dir.path())),
        2
    );
    fs::write(dir.path().join("bad.json"), r#"{"landmarks": 3}"#).unwrap();
    assert_eq!(
        code(&lungwarp(&["evaluate", "--config", "bad.json"], dir.path())),
        2
    );
}

#[test]
fn missing_data_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&lungwarp(
            &["evaluate", "--manifest", "nope.json"],
            dir.path()
        )),
        3
    );
}

#[test]
fn singular_kernel_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "3");
    let o = lungwarp(
        &[
            "evaluate",
            "--manifest",
            m.to_str().unwrap(),
            "--no-augment",
            "--k-b",
            "1e-14",
            "--lambda",
            "0",
            "--methods",
            "kernel",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn evaluate_writes_rows_reports_and_error_maps() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "9");
    let mut args = vec![
        "evaluate",
        "--manifest",
        m.to_str().unwrap(),
        "--lobe",
        "upper",
        "-o",
        "out",
    ];
    args.extend(&FAST[..5]);
    let o = lungwarp(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("out/evaluate.csv")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), csv);
    let lines: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(
        lines.iter().filter(|l| !l.starts_with("summary")).count(),
        27
    );
    assert_eq!(lines.iter().filter(|l| l.starts_with("summary")).count(), 3);
    assert!(dir.path().join("out/cases/upper/case05.json").exists());
    let ply =
        fs::read_to_string(dir.path().join("out/meshes/upper/case05_kernel_error.ply")).unwrap();
    assert!(ply.contains("property uchar red"));
    assert!(dir.path().join("out/evaluate_metadata.json").exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "3");
    fs::write(
        dir.path().join("run.json"),
        format!(r#"{{"manifest_path": {:?}, "landmark_count": 3, "methods": ["kernel"], "lobe": "lower"}}"#, m),
    )
    .unwrap();
    let mut args = vec!["evaluate", "--config", "run.json", "--landmarks", "5"];
    args.extend(&FAST);
    let o = lungwarp(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.contains(",kernel,lower,5,")));
}

#[test]
fn sweeps_and_sensitivity_run_and_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "4");
    let m = m.to_str().unwrap();
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd, "--manifest", m, "--lobe", "upper", "-o", "out"];
        args.extend(&FAST);
        args.extend(extra);
        let o = lungwarp(&args, dir.path());
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let cases = run("sweep-cases", &["--max-combinations", "2"]);
    assert_eq!(cases, run("sweep-cases", &["--max-combinations", "2"]));
    assert_eq!(cases.lines().count(), 1 + 2 * 3);
    let lm = run("sweep-landmarks", &["--methods", "kernel"]);
    assert_eq!(lm.lines().count(), 1 + 2 * 12);
    let s = run("sensitivity", &["--columns", "deflated_landmarks"]);
    let v: serde_json::Value = serde_json::from_str(s.lines().next().unwrap()).unwrap();
    assert_eq!(v["columns"], "deflated_landmarks");
    assert!(v["lambda_mean"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("out/sensitivity.json").exists());
}
