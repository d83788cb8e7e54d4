use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn nearlin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nearlin"))
}

fn synthetic_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "dataset": {"synthetic": {"d": 5, "m": 200, "seed": 3}},
        "net": {"depth": 2, "width": 8, "beta": 0.1, "epsilon": 0.01, "init_mode": "dense", "seed": 1},
        "train": {"lr": 0.01, "t_end": 4.0, "log_interval": 0.1, "record_alignment": false},
        "bound": {"kappa": [1, 2], "p": 32, "delta": 0.01},
    });
    let path = dir.join("synthetic.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn sweep(config: &Path, out: &Path) {
    let status = nearlin()
        .args(["bound-sweep", "--workers", "1", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"dataset": {"synthetic": {"d": 3, "m": 10, "seed": 0}}, "bogus": 1}"#).unwrap();
    let out = nearlin().args(["bound-sweep", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn missing_mnist_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mnist.json");
    std::fs::write(&path, r#"{"dataset": {"mnist": {"downsample_to": 7}}}"#).unwrap();
    let out = nearlin()
        .env("NEARLIN_MNIST_DIR", dir.path().join("nowhere"))
        .args(["bound-sweep", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_is_deterministic_and_summary_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    sweep(&config, &a);
    sweep(&config, &b);
    for name in ["point-000.csv", "point-000-trajectory.csv"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }

    let text = std::fs::read_to_string(a.join("point-000.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# nearlin "));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (ck, cg, ct, ctot) = (col("kappa"), col("gamma"), col("t"), col("total"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap_or(f64::NAN)).collect())
        .collect();

    let summary: Value = serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    let entries = summary["points"][0]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 6);
    for e in entries {
        let kappa = e["kappa"].as_f64().unwrap();
        let gamma = e["gamma"].as_f64().unwrap();
        let best = rows
            .iter()
            .filter(|r| r[ck] == kappa && r[cg] == gamma && r[ctot].is_finite())
            .min_by(|x, y| x[ctot].total_cmp(&y[ctot]))
            .unwrap();
        assert_eq!(e["min_total"].as_f64().unwrap(), best[ctot]);
        assert_eq!(e["argmin_t"].as_f64().unwrap(), best[ct]);
    }
}

#[test]
fn selftest_passes() {
    let out = nearlin().arg("selftest").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
