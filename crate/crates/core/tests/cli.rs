use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn revctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_revctl"))
        .args(args)
        .output()
        .expect("revctl runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_in(dir: &TempDir, cmd: &str, config: &Path, out: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.path().join(out);
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (revctl(&args), out)
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

const QUENCH: &str = r#"{
  "model": {"kind": "lmg", "n": 8},
  "quench": {"t_max": 2.0, "n_cycles": 6, "seed": 4},
  "record_stride": 20,
  "sweep": {"seeds": 3}
}"#;

const SCAN: &str = r#"{
  "model": {"kind": "lmg", "n": 6},
  "quench": {"t_max": 3.0, "n_cycles": 10, "seed": 2},
  "control": {
    "total_time": 10.0,
    "n_f": [1, 2, 3, 4],
    "optimizer": {"local_search": "bfgs", "max_evaluations": 400, "simplex_scale": 1.0, "n_restarts": 2, "seed": 9}
  }
}"#;

#[test]
fn quench_writes_provenance_and_reruns_byte_identically() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "q.json", QUENCH);
    let (a, out_a) = run_in(&dir, "quench", &cfg, "a", &["--workers", "1"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let (b, out_b) = run_in(&dir, "quench", &cfg, "b", &["--workers", "3"]);
    assert_eq!(b.status.code(), Some(0));

    let files = read_dir(&out_a);
    assert_eq!(files, read_dir(&out_b));
    let names: Vec<&str> = files.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["quench_segments.csv", "quench_summary.json", "quench_trajectories.csv"]);

    let hash = spinrev::config::ExperimentConfig::load(&cfg).unwrap().hash();
    for (name, bytes) in &files {
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("revctl 0.1.0"), "{name}: no version");
        assert!(text.contains(&hash), "{name}: no config hash");
        if name.ends_with(".csv") {
            assert!(text.starts_with("# revctl 0.1.0\n# command quench\n# config_sha256 "), "{name}");
        }
    }
}

#[test]
fn seed_offset_changes_runs_and_hash() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "q.json", QUENCH);
    let (_, plain) = run_in(&dir, "quench", &cfg, "plain", &[]);
    let (o, shifted) = run_in(&dir, "quench", &cfg, "shifted", &["--seed-offset", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let a = fs::read_to_string(plain.join("quench_segments.csv")).unwrap();
    let b = fs::read_to_string(shifted.join("quench_segments.csv")).unwrap();
    assert_ne!(a.lines().nth(2), b.lines().nth(2), "hash line must differ");
    assert_ne!(a.lines().skip(3).collect::<Vec<_>>(), b.lines().skip(3).collect::<Vec<_>>());

    // Offset 5 on seed 4 equals seed 9 with no offset.
    let cfg9 = write(dir.path(), "q9.json", &QUENCH.replace("\"seed\": 4", "\"seed\": 9"));
    let (_, nine) = run_in(&dir, "quench", &cfg9, "nine", &[]);
    let c = fs::read_to_string(nine.join("quench_segments.csv")).unwrap();
    assert_eq!(b.lines().skip(3).collect::<Vec<_>>(), c.lines().skip(3).collect::<Vec<_>>());
}

#[test]
fn validation_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = [
        r#"{"model": {"kind": "lmg", "n": 8}, "typo": 1}"#,
        r#"{"model": {"kind": "lmg", "n": 0}}"#,
        r#"{"model": {"kind": "ising_chain", "n": 40}}"#,
        r#"{"model": {"kind": "lmg", "n": 8}, "noise": {"xi": [-1.0]}}"#,
        r#"{"model": {"kind": "lmg", "n": 8}, "control": {"n_f": [0]}}"#,
        r#"{"model": "#,
    ];
    for (k, text) in bad.iter().enumerate() {
        let cfg = write(dir.path(), &format!("bad{k}.json"), text);
        let (o, out) = run_in(&dir, "quench", &cfg, &format!("bad{k}"), &[]);
        assert_eq!(o.status.code(), Some(2), "config {k}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "config {k} wrote output");
    }

    let missing = dir.path().join("missing.json");
    assert_eq!(run_in(&dir, "quench", &missing, "m", &[]).0.status.code(), Some(2));

    let cfg = write(dir.path(), "q.json", QUENCH);
    assert_eq!(run_in(&dir, "quench", &cfg, "w", &["--workers", "0"]).0.status.code(), Some(2));

    // Scaling needs the Ising chain; fit needs tables.
    assert_eq!(run_in(&dir, "scaling", &cfg, "s", &[]).0.status.code(), Some(2));
    assert_eq!(run_in(&dir, "fit", &cfg, "f", &[]).0.status.code(), Some(2));
}

#[test]
fn exhausted_budget_exits_3_with_outputs() {
    let dir = TempDir::new().unwrap();
    let starved = SCAN.replace("\"max_evaluations\": 400", "\"max_evaluations\": 3");
    let cfg = write(dir.path(), "s.json", &starved);
    let (o, out) = run_in(&dir, "freq-scan", &cfg, "s", &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("decay_N6.csv").exists());
    assert!(out.join("freq_scan.json").exists());
}

#[test]
fn freq_scan_tables_feed_fit() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.json", SCAN);
    let (o, out) = run_in(&dir, "freq-scan", &cfg, "scan", &["--workers", "2"]);
    assert!(matches!(o.status.code(), Some(0 | 3)), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("decay_N6.csv")).unwrap();
    assert_eq!(table.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 4);

    let (again, out2) = run_in(&dir, "freq-scan", &cfg, "scan2", &["--workers", "1"]);
    assert_eq!(again.status.code(), o.status.code());
    assert_eq!(read_dir(&out), read_dir(&out2));

    let fit = write(
        dir.path(),
        "fit.json",
        r#"{"model": {"kind": "lmg", "n": 6}, "fit": {"tables": ["scan/decay_N6.csv"]}}"#,
    );
    let (f, fit_out) = run_in(&dir, "fit", &fit, "fitted", &[]);
    assert!(matches!(f.status.code(), Some(0 | 3)), "{}", String::from_utf8_lossy(&f.stderr));
    let csv = fs::read_to_string(fit_out.join("fit.csv")).unwrap();
    assert!(csv.starts_with("# revctl 0.1.0\n# command fit\n"));
    assert!(csv.contains("jx,transition,n,b,eta,residual,used"));
    assert!(fit_out.join("fit_report.json").exists());
}

#[test]
fn output_defaults_to_config_field() {
    let dir = TempDir::new().unwrap();
    let text = QUENCH.replacen('{', r#"{"output": "results","#, 1);
    let cfg = write(dir.path(), "q.json", &text);
    let o = revctl(&["quench", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("results/quench_summary.json").exists());
}

#[test]
fn example_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs");
    let mut n = 0;
    for e in fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            spinrev::config::ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 6);
}
