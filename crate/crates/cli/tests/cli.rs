use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn frontlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frontlab")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, initial: &str, t_end: f64) -> String {
    let text = format!(
        r#"{{ "potential": {{ "name": "quartic" }}, "eps": 0.05,
             "domain": {{ "x_min": -1.0, "x_max": 1.0 }},
             "initial": {initial}, "t_end": {t_end}, "output_dir": "{name}" }}"#
    );
    let file = format!("{name}.json");
    std::fs::write(dir.join(&file), text).unwrap();
    file
}

#[test]
fn kink_simulation_is_stationary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "kink", r#"{ "kind": "kink" }"#, 0.25);
    let o = frontlab(&["simulate", &cfg], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&tmp.path().join("kink/manifest.json"));
    let h = m["metrics"]["h"].as_f64().unwrap();
    assert!(m["metrics"]["fronts"]["front_displacement"].as_f64().unwrap() <= h);
    assert_eq!(m["config"]["initial"]["kind"], "kink");

    let o = frontlab(&["verify", "kink"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(read_json(&tmp.path().join("kink/verify.json"))["pass"], true);
}

#[test]
fn malformed_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.json"), "{\n  \"eps\": 0.05,\n  \"domain\": [\n}").unwrap();
    let o = frontlab(&["simulate", "bad.json"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));

    let cfg = write_config(tmp.path(), "typo", r#"{ "kind": "kinkk" }"#, 0.1);
    assert_eq!(code(&frontlab(&["simulate", &cfg], tmp.path())), 2);
    assert_eq!(code(&frontlab(&["simulate", "missing.json"], tmp.path())), 2);
    assert_eq!(code(&frontlab(&["no-such-command"], tmp.path())), 2);
}

#[test]
fn annihilation_is_logged_and_tracked() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ka", r#"{ "kind": "kink_antikink", "separation": 0.2 }"#, 0.25);
    let o = frontlab(&["simulate", &cfg], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&tmp.path().join("ka/manifest.json"));
    let ev = &m["metrics"]["fronts"]["events"];
    assert!(ev.as_array().unwrap().iter().any(|e| e["from"] == 2 && e["to"] == 0), "{ev}");

    let o = frontlab(&["verify", "ka", "--checks", "front_tracker"], tmp.path());
    assert_eq!(code(&o), 0);
    let v = read_json(&tmp.path().join("ka/verify.json"));
    assert!(v["verdicts"][0]["params"]["dissipation_stages"].as_u64().unwrap() >= 1);

    assert_eq!(code(&frontlab(&["verify", "ka", "--checks", "bogus"], tmp.path())), 2);
}

#[test]
fn tampered_trajectory_fails_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "kink", r#"{ "kind": "kink" }"#, 0.1);
    assert_eq!(code(&frontlab(&["simulate", &cfg], tmp.path())), 0);
    let path = tmp.path().join("kink/manifest.json");
    let mut m = read_json(&path);
    let e = m["energies"].as_array_mut().unwrap();
    let mid = e.len() / 2;
    e[mid] = Value::from(e[mid].as_f64().unwrap() + 0.1);
    std::fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();

    let o = frontlab(&["verify", "kink"], tmp.path());
    assert_eq!(code(&o), 1);
    let v = read_json(&tmp.path().join("kink/verify.json"));
    let identity = v["verdicts"].as_array().unwrap().iter().find(|v| v["check"] == "energy_identity").unwrap();
    assert_eq!(identity["pass"], false);
}

#[test]
fn covering_examples_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [(&str, f64, &[f64]); 3] = [("0", 1.0, &[0.0]), ("0 2", 1.0, &[1.0]), ("0 3.99 67.9", 1.0, &[3.99])];
    for (i, (pts, delta, centers)) in cases.iter().enumerate() {
        let file = format!("p{i}.txt");
        std::fs::write(tmp.path().join(&file), pts).unwrap();
        let out = format!("c{i}.json");
        let o = frontlab(&["covering", "--points", &file, "--delta", &delta.to_string(), "--out", &out], tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let r = read_json(&tmp.path().join(&out));
        assert_eq!(r["valid"], true);
        let got: Vec<f64> = r["covering"]["points"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(got.len(), centers.len(), "{pts}");
    }
    std::fs::write(tmp.path().join("bad.txt"), "1 two").unwrap();
    assert_eq!(code(&frontlab(&["covering", "--points", "bad.txt", "--delta", "1"], tmp.path())), 2);
}

#[test]
fn stationary_and_sweep_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "st", r#"{ "kind": "kink" }"#, 0.0);
    let o = frontlab(&["stationary", &cfg], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&tmp.path().join("st/stationary.json"));
    assert!((s["energy"].as_f64().unwrap() - 2.0 * 2f64.sqrt() / 3.0).abs() < 1e-4);
    assert_eq!(s["config"]["eps"], 0.05);

    let o = frontlab(&["speed-sweep", &cfg, "--separations", "6,8,10,12"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&tmp.path().join("st/sweep.json"));
    assert!(r["fit"]["r2"].as_f64().unwrap() >= 0.98);
    assert_eq!(r["config"]["separations_eps"].as_array().unwrap().len(), 4);
    assert_eq!(code(&frontlab(&["speed-sweep", &cfg, "--separations", "6,8"], tmp.path())), 2);
}

#[test]
fn identical_configs_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let initial = r#"{ "kind": "random_smooth", "energy_cap": 2.0, "modes": 4 }"#;
    let cfg = write_config(tmp.path(), "rs", initial, 0.05);
    for out in ["a", "b"] {
        assert_eq!(code(&frontlab(&["simulate", &cfg, "--out", out], tmp.path())), 0);
    }
    for f in ["manifest.json", "verdicts.json", "snapshot_00000.csv", "snapshot_00100.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
