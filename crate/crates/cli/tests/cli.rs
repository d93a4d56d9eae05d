use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chernflow"));
    c.env_remove("CHERNFLOW_THREADS");
    c
}

fn model(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("models").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn chernflow")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data rows of the first block as numbers, keyed by header.
fn table(csv: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#')).skip_while(|l| l.is_empty());
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .take_while(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let (h, rows) = table(csv);
    let k = h.iter().position(|c| c == name).unwrap();
    rows.iter().map(|r| r[k]).collect()
}

#[test]
fn examples_lists_registry() {
    let o = run(&["examples"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["abelian", "heisenberg_kt_integrable", "affine_solvable", "expanding", "torus_flat", "torus_bump"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name}");
    }
}

#[test]
fn abelian_curve_is_constant() {
    let o = run(&["homogeneous", "--model", &model("abelian.json"), "--t-end", "10"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = stdout(&o);
    assert!(csv.starts_with("#version "));
    assert!(csv.lines().nth(1).unwrap().starts_with("#model-hash sha256:"));
    assert!(csv.contains("#T inf"));
    assert!(column(&csv, "R").iter().all(|r| *r == 0.0));
    assert!(column(&csv, "omega_0_1").iter().all(|w| *w == 1.0));
}

#[test]
fn normalized_affine_approaches_two() {
    let o = run(&["homogeneous", "--model", &model("affine.json"), "--t-end", "10", "--normalized", "--crosscheck"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = stdout(&o);
    let t = column(&csv, "t");
    let w = column(&csv, "omega_0_1");
    for (t, w) in t.iter().zip(&w) {
        assert!((w - (2.0 - (-t).exp())).abs() < 1e-14);
    }
    assert!((w.last().unwrap() - 2.0).abs() < 1e-4);
    let cc: f64 = csv.lines().find_map(|l| l.strip_prefix("#crosscheck-max-error ")).unwrap().parse().unwrap();
    assert!(cc < 1e-10);
}

#[test]
fn expanding_reports_horizon() {
    let o = run(&["homogeneous", "--model", &model("expanding.json")]);
    assert_eq!(o.status.code(), Some(0));
    let csv = stdout(&o);
    assert!(csv.contains("#T 0.5\n"));
    let t = column(&csv, "t");
    let last = *t.last().unwrap();
    assert!(last < 0.5 && last > 0.4999);
    let (_, blow) = table(csv.split("#block blowup").nth(1).unwrap());
    assert!(blow.iter().all(|r| (r[3] - 1.0).abs() < 0.01));
    let past = run(&["homogeneous", "--model", &model("expanding.json"), "--t-end", "0.6"]);
    assert_eq!(past.status.code(), Some(4));
}

#[test]
fn homogeneous_output_is_deterministic() {
    let a = run(&["homogeneous", "--model", "affine_pair", "--t-end", "3", "--samples", "37"]);
    let b = bin()
        .args(["homogeneous", "--model", "affine_pair", "--t-end", "3", "--samples", "37"])
        .env("CHERNFLOW_THREADS", "1")
        .output()
        .unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"kind":"lie_algebra","dim":4,"brackets":[]}"#).unwrap();
    assert_eq!(run(&["homogeneous", "--model", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["homogeneous", "--model", "no_such_model"]).status.code(), Some(2));
    let o = run(&["homogeneous", "--model", &model("bad_jacobi.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["homogeneous", "--model", &model("bad_jacobi.json"), "--allow-non-lie"]).status.code(), Some(0));
    let threads = bin().args(["examples"]).env("CHERNFLOW_THREADS", "zero").output().unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn inconsistent_brackets_warn() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(
        &path,
        r#"{"kind":"lie_algebra","dim":4,"brackets":[[1,0,1,1.0],[1,1,0,1.0]],"J":"standard","omega0":"standard"}"#,
    )
    .unwrap();
    let o = run(&["homogeneous", "--model", path.to_str().unwrap(), "--t-end", "1"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("disagree"));
    assert!(column(&stdout(&o), "R").iter().all(|r| *r == 0.0));
}

#[test]
fn check_reports_jacobi_failure() {
    let o = run(&["check", "--model", &model("bad_jacobi.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).lines().any(|l| l.contains("Jacobi identity") && l.contains("FAIL")));
}

#[test]
fn check_affine_includes_kappa_row() {
    let o = run(&["check", "--model", &model("affine.json")]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let row = text.lines().find(|l| l.contains("cric = kappa p11")).unwrap();
    assert!(row.contains("pass") && row.contains("kappa = 1"));
}

#[test]
fn check_registry_passes() {
    let o = run(&["check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    for name in ["abelian", "heisenberg_kt_integrable", "heisenberg_kt_nonintegrable", "affine_solvable", "torus_flat", "torus_bump"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name}");
    }
}

fn torus_run(dir: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join("trace.csv");
    let mut args = vec!["torus", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (run(&args), out)
}

#[test]
fn flat_torus_converges_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = torus_run(dir.path(), &["--model", &model("torus_flat.json")]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(&out).unwrap();
    let summary = csv.lines().find(|l| l.starts_with("#summary")).unwrap();
    assert!(summary.contains("converged=true") && summary.contains(" b=0.0 ") && summary.ends_with("stationary_residual=0.0"));
    let ck = std::fs::read(out.with_extension("ckpt")).unwrap();
    assert_eq!(ck.len(), 28 + 8 * 256);
    assert_eq!(&ck[..8], b"CHFLCKPT");
}

#[test]
fn unstable_sigma_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = torus_run(dir.path(), &["--model", &model("torus_bump.json"), "--n-grid", "16", "--dt-sigma", "2.0"]);
    assert_eq!(o.status.code(), Some(3));
    let csv = std::fs::read_to_string(out).unwrap();
    assert!(csv.contains("#abort") && csv.contains("#block rejections"));
}

#[test]
fn sampled_metric_file_matches_closed_form_spec() {
    let dir = tempfile::tempdir().unwrap();
    let n = 8;
    let mut values = String::new();
    for idx in 0..n * n {
        let (x, y) = ((idx % n) as f64 / n as f64, (idx / n) as f64 / n as f64);
        let g = 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).sin();
        values.push_str(&format!("{g:?} 0.0\n"));
    }
    std::fs::write(dir.path().join("g.txt"), values).unwrap();
    let file_model = dir.path().join("sampled.json");
    std::fs::write(&file_model, r#"{"kind":"torus","n":1,"N":8,"metric":{"file":"g.txt"}}"#).unwrap();
    let spec_model = dir.path().join("spec.json");
    std::fs::write(&spec_model, r#"{"kind":"torus","n":1,"N":8,"metric":{"conformal":{"amplitude":0.5}}}"#).unwrap();
    let rows = |m: &Path, out: &str| {
        let out = dir.path().join(out);
        let o = run(&["torus", "--model", m.to_str().unwrap(), "--t-end", "0.02", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        table(&std::fs::read_to_string(out).unwrap()).1
    };
    let (a, b) = (rows(&file_model, "a.csv"), rows(&spec_model, "b.csv"));
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b) {
        assert!(ra.iter().zip(rb).all(|(x, y)| (x - y).abs() <= 1e-12 * y.abs().max(1.0)));
    }
    std::fs::write(dir.path().join("g.txt"), "1.0 0.0\n").unwrap();
    let o = run(&["torus", "--model", file_model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn torus_output_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "torus".to_string(),
            "--model".into(),
            model("torus_bump.json"),
            "--n-grid".into(),
            "16".into(),
            "--t-end".into(),
            "0.05".into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(bin().args(args(&a)).env("CHERNFLOW_THREADS", "1").status().unwrap().success());
    assert!(bin().args(args(&b)).env("CHERNFLOW_THREADS", "4").status().unwrap().success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(a.with_extension("ckpt")).unwrap(), std::fs::read(b.with_extension("ckpt")).unwrap());
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let o = run(&[
        "torus", "--model", &model("torus_bump.json"), "--n-grid", "16", "--t-end", "0.02", "--out", first.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let second = dir.path().join("second.csv");
    let ck = first.with_extension("ckpt");
    let o = run(&[
        "torus", "--model", &model("torus_bump.json"), "--n-grid", "16", "--t-end", "0.04", "--resume", ck.to_str().unwrap(),
        "--out", second.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let t = column(&std::fs::read_to_string(second).unwrap(), "t");
    assert!((t[0] - 0.02).abs() < 1e-12 && (t.last().unwrap() - 0.04).abs() < 1e-12);
    let wrong = run(&["torus", "--model", &model("torus_bump.json"), "--n-grid", "32", "--resume", ck.to_str().unwrap()]);
    assert_eq!(wrong.status.code(), Some(2));
}
