use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_msm-emu"))
}

fn small_config(out: &Path) -> Value {
    json!({
        "out_dir": out,
        "langevin": {"n_steps": 20000},
        "msm": {"n_macro": 3, "lag": 10},
        "train": {
            "lr": 1e-3,
            "epochs": 4,
            "steps_per_epoch": 10,
            "batch_size": 16,
            "held_out_pairs": 16,
            "net": {"hidden": 16, "n_blocks": 1, "time_dim": 8, "label_dim": 4}
        },
        "sample": {
            "budget": 40,
            "first_layer": 20,
            "n_anchors": 4,
            "rollout_len": 2,
            "ode": {"n_steps": 10},
            "plans": [
                {"model": "mars", "scheme": "tree"},
                {"model": "mars", "scheme": "parallel"},
                {"model": "fixed_lag", "scheme": "autoregressive"},
                {"model": "mars", "scheme": "hybrid"}
            ]
        }
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(cmd: &[&str], cfg: &Path, extra: &[&str], threads: Option<&str>) -> Output {
    let mut c = bin();
    c.args(cmd).arg("--config").arg(cfg).args(extra);
    if let Some(t) = threads {
        c.env("MSM_EMU_THREADS", t);
    }
    c.output().unwrap()
}

fn ok(cmd: &[&str], cfg: &Path, extra: &[&str], threads: Option<&str>) {
    let o = run(cmd, cfg, extra, threads);
    assert!(
        o.status.success(),
        "{cmd:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn pipeline(cfg: &Path, threads: Option<&str>) {
    for c in ["simulate", "build-msm", "train"] {
        ok(&[c], cfg, &[], threads);
    }
    ok(&["sample"], cfg, &["--runs", "2"], threads);
    ok(&["evaluate"], cfg, &["--runs", "2", "--oracle"], threads);
    ok(&["report"], cfg, &[], threads);
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if !p.file_name().unwrap().to_string_lossy().starts_with("train_timing_") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn pipeline_is_byte_reproducible_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let ca = write_config(tmp.path(), "a.json", &small_config(&a));
    let cb = write_config(tmp.path(), "b.json", &small_config(&b));
    pipeline(&ca, Some("2"));
    pipeline(&cb, Some("1"));
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{} differs", k.display());
    }

    let manifest = read_json(&a.join("data/manifest.json"));
    assert_eq!(manifest["files"].as_array().unwrap().len(), 5);
    for i in 0..5 {
        assert!(a.join(format!("data/replica_{i}.mset")).exists());
    }

    let msm = read_json(&a.join("msm.json"));
    let pops = msm["diagnostics"]["macro_populations"].as_array().unwrap();
    assert_eq!(pops.len(), 3);

    let log = read_json(&a.join("train_log_mars.json"));
    let epochs = log["epochs"].as_array().unwrap();
    assert_eq!(epochs.len(), 4);
    assert!(epochs.last().unwrap()["loss"].as_f64() < epochs[0]["loss"].as_f64());
    let ckpt = fs::read(a.join("checkpoint_fixed_lag.msem")).unwrap();
    assert_eq!(&ckpt[..4], b"MSEM");
    assert_eq!(u32::from_le_bytes(ckpt[8..12].try_into().unwrap()), 1);

    let tree = read_json(&a.join("samples/mars_tree_run0.json"));
    assert_eq!(tree["n_frames"], 40);
    let par = read_json(&a.join("samples/mars_parallel_run1.json"));
    assert!(par["frames"].as_array().unwrap().iter().all(|f| f["parent"] == -1));
    let hybrid = read_json(&a.join("samples/hybrid_run0.json"));
    assert_eq!(hybrid["n_frames"], 4 * 3);

    let oracle = read_json(&a.join("reports/oracle.json"));
    assert_eq!(oracle["n_runs"], 5);
    let summary = fs::read_to_string(a.join("report/summary.md")).unwrap();
    assert!(summary.contains(
        "| metric | fixed_lag_autoregressive | hybrid | mars_parallel | mars_tree | oracle |"
    ));
}

#[test]
fn tree_budget_500_layers() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut v = small_config(&out);
    v["train_mode"] = json!("mars");
    v["train"]["epochs"] = json!(1);
    v["sample"]["budget"] = json!(500);
    v["sample"]["first_layer"] = json!(200);
    v["sample"]["ode"]["n_steps"] = json!(2);
    v["sample"]["plans"] = json!([{"model": "mars", "scheme": "tree"}]);
    let cfg = write_config(tmp.path(), "c.json", &v);
    for c in ["simulate", "build-msm", "train", "sample"] {
        ok(&[c], &cfg, &[], None);
    }
    let side = read_json(&out.join("samples/mars_tree_run0.json"));
    let mut layers = [0usize; 3];
    for f in side["frames"].as_array().unwrap() {
        layers[f["depth"].as_u64().unwrap() as usize - 1] += 1;
    }
    assert_eq!(layers, [200, 200, 100]);
}

#[test]
fn invalid_config_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut v = small_config(&out);
    v["langevin"]["n_steps"] = json!(0);
    let cfg = write_config(tmp.path(), "c.json", &v);
    let o = run(&["simulate"], &cfg, &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\n  \"seed\": 1,\n  \"n_replica\": 3\n}").unwrap();
    let o = run(&["simulate"], &bad, &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let o = run(&["simulate"], &write_config(tmp.path(), "d.json", &small_config(&out)), &[], Some("zero"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let v = small_config(&out);
    let cfg = write_config(tmp.path(), "c.json", &v);
    assert_eq!(run(&["build-msm"], &cfg, &[], None).status.code(), Some(3));

    ok(&["simulate"], &cfg, &[], None);
    let mut long_lag = v.clone();
    long_lag["msm"]["lag"] = json!(5000);
    let o = run(&["build-msm"], &write_config(tmp.path(), "lag.json", &long_lag), &[], None);
    assert_eq!(o.status.code(), Some(2));

    ok(&["build-msm"], &cfg, &[], None);
    let mut mars_only = v.clone();
    mars_only["train_mode"] = json!("mars");
    mars_only["train"]["epochs"] = json!(1);
    mars_only["sample"]["plans"] = json!([{"model": "mars", "scheme": "hybrid"}]);
    let mo = write_config(tmp.path(), "mars.json", &mars_only);
    ok(&["train"], &mo, &[], None);
    let o = run(&["sample"], &mo, &[], None);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fixed_lag checkpoint"));

    let mut other = v.clone();
    other["system"] = json!({"n_particles": 2, "dim": 2, "masses": [1.0, 1.0], "labels": [0, 0]});
    other["sample"]["plans"] = json!([{"model": "mars", "scheme": "parallel"}]);
    let oc = write_config(tmp.path(), "other.json", &other);
    let o = run(&["evaluate"], &oc, &[], None);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn seed_and_out_flags_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config(&tmp.path().join("unused")));
    let o1 = tmp.path().join("s1");
    let o2 = tmp.path().join("s2");
    ok(&["simulate"], &cfg, &["--seed", "1", "--out", o1.to_str().unwrap()], None);
    ok(&["simulate"], &cfg, &["--seed", "2", "--out", o2.to_str().unwrap()], None);
    assert!(!tmp.path().join("unused").exists());
    assert_ne!(
        fs::read(o1.join("data/replica_0.mset")).unwrap(),
        fs::read(o2.join("data/replica_0.mset")).unwrap()
    );
}
