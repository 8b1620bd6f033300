use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMOKE: &str = include_str!("../../../configs/smoke.toml");

fn mendkit(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mendkit"))
        .args(args)
        .env("MENDKIT_CACHE", cache)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn mendkit")
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{SMOKE}\n{extra}")).unwrap();
    path
}

fn stage_dirs(cache: &Path, stage: &str) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(cache.join(stage))
        .map(|it| it.filter_map(|e| e.ok()).map(|e| e.path()).collect())
        .unwrap_or_default();
    dirs.sort();
    dirs
}

fn artifacts(cache: &Path) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    for stage in ["fracture", "sample", "train", "infer", "reconstruct", "eval"] {
        for dir in stage_dirs(cache, stage) {
            let rec: Value = serde_json::from_slice(&fs::read(dir.join("stage.json")).unwrap()).unwrap();
            out.insert(format!("{stage}/{}", dir.file_name().unwrap().to_string_lossy()), rec["artifacts"].clone());
        }
    }
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn toy_pipeline_end_to_end_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    let out = mendkit(&a, &["--config", cfg, "--workers", "1", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("overall:"), "{stdout}");
    let eval = stage_dirs(&a, "eval");
    assert_eq!(eval.len(), 1);
    let report: Value = serde_json::from_slice(&fs::read(eval[0].join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);

    for stage in ["fracture", "sample", "train", "infer", "reconstruct", "eval"] {
        let dir = &stage_dirs(&a, stage)[0];
        for f in ["config.toml", "hash", "stage.json", "DONE"] {
            assert!(dir.join(f).exists(), "{stage} lacks {f}");
        }
    }
    let first = artifacts(&a);

    // Unchanged config: nothing is rebuilt.
    let stamp = fs::metadata(stage_dirs(&a, "train")[0].join("model.dmck")).unwrap().modified().unwrap();
    let out = mendkit(&a, &["--config", cfg, "run"]);
    assert!(out.status.success());
    assert_eq!(fs::metadata(stage_dirs(&a, "train")[0].join("model.dmck")).unwrap().modified().unwrap(), stamp);
    assert_eq!(artifacts(&a), first);

    // A fresh root reproduces every artifact byte for byte.
    let out = mendkit(&b, &["--config", cfg, "--workers", "1", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(artifacts(&b), first);

    // A different seed yields different stages.
    let out = mendkit(&b, &["--config", cfg, "--seed", "8", "fracture"]);
    assert!(out.status.success());
    assert_eq!(stage_dirs(&b, "fracture").len(), 2);
}

#[test]
fn ablation_table_covers_every_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    let cache = tmp.path().join("cache");
    for cmd in ["fracture", "sample", "train"] {
        assert!(mendkit(&cache, &["--config", cfg, cmd]).status.success());
    }
    let modes = "none,ner,prox,nerp,proxp,ner+prox";
    let out = mendkit(&cache, &["--config", cfg, "--penalty-mode", modes, "infer"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stage_dirs(&cache, "infer").len(), 6);
    assert_eq!(stage_dirs(&cache, "eval").len(), 6);
    let table = String::from_utf8_lossy(&out.stdout);
    for m in modes.split(',') {
        assert!(table.lines().any(|l| l.starts_with(&format!("{m} "))), "{m} missing from\n{table}");
    }
    let ablation = stage_dirs(&cache, "ablation");
    let json: Value = serde_json::from_slice(&fs::read(ablation[0].join("table.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 6);
}

#[test]
fn multiplicity_and_watertightness() {
    let tmp = tempfile::tempdir().unwrap();
    let meshes = tmp.path().join("meshes");
    let cache = tmp.path().join("cache");
    let fixtures = tmp.path().join("fixtures");
    let out = mendkit(&cache, &["fixtures", "--out", fixtures.to_str().unwrap(), "--toy-resolution", "24"]);
    assert!(out.status.success(), "{}", stderr(&out));
    fs::create_dir_all(meshes.join("mugs")).unwrap();
    fs::create_dir_all(meshes.join("jars")).unwrap();
    fs::copy(fixtures.join("pill.ply"), meshes.join("mugs/pill.ply")).unwrap();
    fs::copy(fixtures.join("peanut.ply"), meshes.join("jars/peanut.ply")).unwrap();
    // A single open triangle.
    fs::write(meshes.join("jars/open.obj"), "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();

    let cfg = write_config(tmp.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("[data]", "[data]\nmultiplicity = { mugs = 3 }");
    fs::write(&cfg, text).unwrap();
    let out = mendkit(&cache, &["--config", cfg.to_str().unwrap(), "--mesh-dir", meshes.to_str().unwrap(), "fracture"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    let dir = &stage_dirs(&cache, "fracture")[0];
    let manifest: Vec<Value> = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    let ids: Vec<&str> = manifest.iter().map(|e| e["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["jars-open-0", "jars-peanut-0", "mugs-pill-0", "mugs-pill-1", "mugs-pill-2"]);
    let skipped = manifest[0]["skipped"].as_str().unwrap();
    assert!(skipped.contains("watertight"), "{skipped}");
    for id in &ids[1..] {
        assert!(dir.join("shapes").join(id).join("complete.ply").exists());
    }
    let classes: BTreeMap<String, String> = serde_json::from_slice(&fs::read(dir.join("classes.json")).unwrap()).unwrap();
    assert_eq!(classes["mugs-pill-2"], "mugs");
    assert!(!classes.contains_key("jars-open-0"));
}

#[test]
fn usage_and_missing_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let cfg = write_config(tmp.path(), "[bogus]\n");
    let out = mendkit(&cache, &["--config", cfg.to_str().unwrap(), "fracture"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(mendkit(&cache, &["--penalty-mode", "sideways", "fracture"]).status.code(), Some(2));
    assert_eq!(mendkit(&cache, &["frobnicate"]).status.code(), Some(2));

    let cfg = write_config(tmp.path(), "");
    let out = mendkit(&cache, &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing inputs"), "{}", stderr(&out));
}

#[test]
fn selftest_catches_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mendkit(tmp.path(), &["selftest", "--gradcheck-models", "1"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    for suite in ["partition", "gradients", "tps", "marching", "metrics"] {
        let line = text.lines().find(|l| l.starts_with(suite)).unwrap();
        assert!(line.contains("PASS") && line.contains("checks=") && line.contains("max_error="), "{line}");
    }

    let out = mendkit(tmp.path(), &["selftest", "--gradcheck-models", "1", "--inject-fault"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(1));
    assert!(text.lines().any(|l| l.starts_with("partition") && l.contains("FAIL")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("tps") && l.contains("PASS")), "{text}");
}
