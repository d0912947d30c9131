use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[scenario]
n_rx = 16
num_paths = 2
coherence_len = 4
seed = 3

[sweep]
axis = "snr_db"
values = [0.0, 20.0]
estimators = ["pbce_rmusic", "genie_lmmse", "bound_cme_ab", "zero"]
trials = 50

[output]
workers = 0
"#;

fn pbce(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pbce"));
    cmd.args(args).env_remove("PBCE_WORKERS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn rows(csv: &Path) -> Vec<Vec<String>> {
    let body = std::fs::read_to_string(csv).unwrap();
    body.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("r.csv");
    // the file asks for zero workers, which is invalid on its own
    let o = pbce(&["sweep", "--config", &cfg, "--trials", "10", "--seed", "7", "--workers", "2", "--output", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", text(&o));
    let r = rows(&out);
    assert_eq!(r.len(), 8);
    for row in &r {
        let used: usize = row[5].parse().unwrap();
        let failed: usize = row[6].parse().unwrap();
        assert_eq!(used + failed, 10);
    }
    assert!(text(&o).contains("snr_db = 20:"));
}

#[test]
fn range_values_expand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("r.csv");
    let o = pbce(
        &["sweep", "--config", &cfg, "--trials", "2", "--workers", "1", "--axis", "snr_db", "--values", "-10:5:40",
          "--estimators", "zero", "--output", out.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", text(&o));
    let values: Vec<f64> = rows(&out).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(values, (0..11).map(|i| -10.0 + 5.0 * i as f64).collect::<Vec<_>>());
}

#[test]
fn worker_count_from_environment_keeps_output_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let mut files = Vec::new();
    for w in ["1", "3"] {
        let out = dir.path().join(format!("w{w}.csv"));
        let o = pbce(&["sweep", "--config", &cfg, "--output", out.to_str().unwrap()], &[("PBCE_WORKERS", w)]);
        assert!(o.status.success(), "{}", text(&o));
        files.push(std::fs::read(out).unwrap());
    }
    assert_eq!(files[0], files[1]);
    // the environment alone is still validated
    let o = pbce(&["sweep", "--config", &cfg], &[("PBCE_WORKERS", "0")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_names_the_path() {
    let o = pbce(&["sweep", "--config", "/no/such/dir/run.toml"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("/no/such/dir/run.toml"));
}

#[test]
fn config_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("\"zero\"", "\"zeroo\""));
    let o = pbce(&["sweep", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    let t = text(&o);
    assert!(t.contains("zeroo") && t.contains("pbce_rmusic") && t.contains("line"), "{t}");

    let cfg = write_config(dir.path(), &CONFIG.replace("seed = 3", "seed = 3\nsnr = 4"));
    let o = pbce(&["sweep", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("snr"));

    let o = pbce(&["sweep", "--config", &cfg, "--estimators", "genie"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("genie_lmmse"));
}

#[test]
fn bounds_table_and_slope() {
    let o = pbce(&["bounds", "--n-rx", "64", "--t", "1", "--snr-db", "30"], &[]);
    assert!(o.status.success());
    let t = text(&o);
    let crb = format!("{:.6e}", 6e-3 / 4095.0);
    assert!(t.contains(&crb), "{t} lacks {crb}");

    let o = pbce(&["bounds", "--n-rx", "64", "--slope", "--grid", "1e-1,1e-2,1e-3,1e-4"], &[]);
    assert!(o.status.success());
    let t = text(&o);
    let line = t.lines().find(|l| l.starts_with("gap_slope ")).unwrap();
    let slope: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((slope - 2.0).abs() < 0.05, "{slope}");

    let o = pbce(&["bounds", "--n-rx", "1"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_passes_and_detects_faults() {
    let o = pbce(&["validate"], &[]);
    assert!(o.status.success(), "{}", text(&o));
    let o = pbce(&["validate", "--perturb", "gain_estimator", "--json"], &[]);
    assert_eq!(o.status.code(), Some(4));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let failed: Vec<&str> = report
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["check"].as_str().unwrap())
        .collect();
    assert_eq!(failed, vec!["gain_estimator"]);
}

#[test]
fn shipped_configs_parse() {
    let docs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs");
    let mut seen = 0;
    for entry in std::fs::read_dir(docs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let dir = tempfile::tempdir().unwrap();
            let out = dir.path().join("x.csv");
            let o = pbce(
                &["sweep", "--config", path.to_str().unwrap(), "--trials", "1", "--values", "20", "--output", out.to_str().unwrap()],
                &[],
            );
            assert!(o.status.success(), "{}: {}", path.display(), text(&o));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
