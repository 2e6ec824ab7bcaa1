use std::path::{Path, PathBuf};
use std::process::Command;

use docdet::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use serde_json::Value;

fn docdet(args: &[&str]) -> i32 {
    let argv = std::iter::once("docdet").chain(args.iter().copied());
    run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Small synthetic dataset in `dir/ds`.
fn synth(dir: &Path, seed: &str) -> PathBuf {
    let ds = dir.join("ds");
    let out = dir.join("synth.json");
    let code = docdet(&[
        "synth", "--out-dir", s(&ds), "--pages", "5", "--width", "240", "--height", "200",
        "--ensemble-size", "3", "--seed", seed, "--out", s(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    ds.join("manifest.jsonl")
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(docdet(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(docdet(&[]), EXIT_USAGE);
    assert_eq!(docdet(&["eval", "object"]), EXIT_USAGE);
    assert_eq!(docdet(&["select", "--scores", "x", "--strategy", "lowest"]), EXIT_USAGE);
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(docdet(&["--version"]), EXIT_OK);
}

#[test]
fn missing_and_malformed_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(docdet(&["eval", "pixel", "--manifest", s(&dir.path().join("none.jsonl"))]), EXIT_DATA);
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json\n").unwrap();
    assert_eq!(docdet(&["eval", "object", "--manifest", s(&bad)]), EXIT_DATA);
    let page = dir.path().join("p.json");
    std::fs::write(&page, r#"{"image_id":"a","width":10,"height":10,"objects":[{"class":1,"polygon":[[0,0],[1,1]]}]}"#).unwrap();
    std::fs::write(&bad, r#"{"image_id":"a","gt_path":"p.json","pred_path":"p.json"}"#).unwrap();
    assert_eq!(docdet(&["eval", "all", "--manifest", s(&bad)]), EXIT_DATA);
}

#[test]
fn bad_flag_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "1");
    assert_eq!(docdet(&["eval", "object", "--manifest", s(&m), "--thresholds", "1.5"]), EXIT_USAGE);
    assert_eq!(docdet(&["extract", "--manifest", s(&m), "--out-dir", "x", "--connectivity", "6"]), EXIT_USAGE);
    assert_eq!(docdet(&["synth", "--out-dir", s(dir.path()), "--drop", "2"]), EXIT_USAGE);
}

#[test]
fn identical_prediction_and_reference_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "2");
    let text = std::fs::read_to_string(&m).unwrap();
    let same: String = text
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            if v.get("gt_path").is_some() {
                v["pred_path"] = v["gt_path"].clone();
            }
            v.to_string() + "\n"
        })
        .collect();
    let same_path = m.with_file_name("same.jsonl");
    std::fs::write(&same_path, same).unwrap();
    let out = dir.path().join("eval.json");
    assert_eq!(docdet(&["eval", "all", "--manifest", s(&same_path), "--out", s(&out)]), EXIT_OK);
    let r = read_json(&out);
    for class in r["sections"]["pixel"]["micro"]["per_class"].as_array().unwrap() {
        assert_eq!(class["iou"], 1.0);
    }
    assert_eq!(r["sections"]["object"]["map"], 1.0);
    assert_eq!(r["sections"]["text"]["cer"], 0.0);
    assert!(r["per_image"].as_array().unwrap().iter().all(|row| row["map"] == 1.0));
}

#[test]
fn object_report_lists_every_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "3");
    let out = dir.path().join("o.json");
    let per = dir.path().join("per.jsonl");
    assert_eq!(
        docdet(&["eval", "object", "--manifest", s(&m), "--out", s(&out), "--per-image-out", s(&per)]),
        EXIT_OK
    );
    let r = read_json(&out);
    let keys: Vec<&String> = r["sections"]["object"]["ap_at"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["50", "55", "60", "65", "70", "75", "80", "85", "90", "95"]);
    assert_eq!(std::fs::read_to_string(&per).unwrap().lines().count(), 5);
    // Per-image mAP equals the generator's recorded truth.
    let truth = std::fs::read_to_string(m.with_file_name("truth.jsonl")).unwrap();
    for (row, t) in r["per_image"].as_array().unwrap().iter().zip(truth.lines()) {
        let t: Value = serde_json::from_str(t).unwrap();
        assert_eq!(row["map"], t["map"]);
    }
}

#[test]
fn text_line_mode_reports_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "4");
    let out = dir.path().join("t.json");
    assert_eq!(docdet(&["eval", "text", "--manifest", s(&m), "--mode", "line", "--out", s(&out)]), EXIT_OK);
    let text = &read_json(&out)["sections"]["text"];
    assert_eq!(text["mode"], "line");
    assert_eq!(text["per_threshold"].as_object().unwrap().len(), 10);
    assert!(text["cer_range"].as_f64().unwrap() >= 0.0);
}

#[test]
fn same_seed_gives_byte_identical_reports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let m = synth(d, "7");
        let scores = d.join("dov.jsonl");
        let per = d.join("per.jsonl");
        assert_eq!(docdet(&["confidence", "dov", "--manifest", s(&m), "--ensemble-size", "3", "--out", s(&scores)]), EXIT_OK);
        assert_eq!(docdet(&["eval", "object", "--manifest", s(&m), "--per-image-out", s(&per), "--out", s(&d.join("e.json"))]), EXIT_OK);
        assert_eq!(
            docdet(&["reject-curve", "--scores", s(&scores), "--metrics", s(&per), "--bootstrap", "100", "--seed", "7", "--out", s(&d.join("rc.json"))]),
            EXIT_OK
        );
    }
    for f in ["synth.json", "dov.jsonl", "e.json", "rc.json", "ds/manifest.jsonl"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let rc = read_json(&a.path().join("rc.json"));
    assert_eq!(rc["config"]["bootstrap_resamples"], 100);
    assert_eq!(rc["config"]["percentiles"], serde_json::json!([10.0, 90.0]));
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "5");
    let one = dir.path().join("1.json");
    let four = dir.path().join("4.json");
    assert_eq!(docdet(&["--jobs", "1", "eval", "all", "--manifest", s(&m), "--out", s(&one)]), EXIT_OK);
    assert_eq!(docdet(&["eval", "all", "--jobs", "4", "--manifest", s(&m), "--out", s(&four)]), EXIT_OK);
    assert_eq!(std::fs::read(&one).unwrap(), std::fs::read(&four).unwrap());
    assert_eq!(docdet(&["--jobs", "0", "eval", "all", "--manifest", s(&m)]), EXIT_USAGE);
}

#[test]
fn jobs_default_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "5");
    let status = Command::new(env!("CARGO_BIN_EXE_docdet"))
        .args(["eval", "object", "--manifest", s(&m), "--out", s(&dir.path().join("e.json"))])
        .env("DOCDET_EVAL_JOBS", "0")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_USAGE));
    let out = Command::new(env!("CARGO_BIN_EXE_docdet"))
        .args(["eval", "object", "--manifest", s(&m)])
        .env("DOCDET_EVAL_JOBS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["command"], "eval object");
    assert!(!out.stderr.is_empty());
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "6");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, format!(r#"{{"manifest": "{}", "thresholds": "0.5,0.75"}}"#, s(&m))).unwrap();
    let out = dir.path().join("o.json");
    assert_eq!(docdet(&["eval", "object", "--config", s(&cfg), "--out", s(&out)]), EXIT_OK);
    assert_eq!(read_json(&out)["config"]["thresholds"], serde_json::json!([0.5, 0.75]));
    assert_eq!(docdet(&["eval", "object", "--config", s(&cfg), "--thresholds", "0.9", "--out", s(&out)]), EXIT_OK);
    assert_eq!(read_json(&out)["config"]["thresholds"], serde_json::json!([0.9]));
}

#[test]
fn normalize_and_extract_chain() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "8");
    let norm = dir.path().join("norm");
    let ext = dir.path().join("ext");
    assert_eq!(docdet(&["normalize", "--manifest", s(&m), "--out-dir", s(&norm), "--long-side", "240", "--out", s(&dir.path().join("n.json"))]), EXIT_OK);
    assert!(norm.join("labels/page-00000.png").exists());
    let sidecar = read_json(&norm.join("labels/page-00000.json"));
    assert!(sidecar["objects"].as_array().unwrap().iter().all(|o| o["output_pixels"].as_u64() <= o["input_pixels"].as_u64()));
    assert_eq!(docdet(&["extract", "--manifest", s(&norm.join("manifest.jsonl")), "--out-dir", s(&ext), "--out", s(&dir.path().join("x.json"))]), EXIT_OK);
    let out = dir.path().join("e.json");
    assert_eq!(docdet(&["eval", "object", "--manifest", s(&ext.join("manifest.jsonl")), "--out", s(&out)]), EXIT_OK);
    let map = read_json(&out)["sections"]["object"]["map"].as_f64().unwrap();
    assert!(map > 0.3, "{map}");
}

#[test]
fn forest_trains_and_predicts() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "9");
    let model = dir.path().join("model.json");
    let scores = dir.path().join("rfr.jsonl");
    assert_eq!(docdet(&["confidence", "rfr-train", "--manifest", s(&m), "--model", s(&model), "--trees", "5", "--seed", "1", "--out", s(&dir.path().join("t.json"))]), EXIT_OK);
    assert_eq!(docdet(&["confidence", "rfr-predict", "--manifest", s(&m), "--model", s(&model), "--out", s(&scores)]), EXIT_OK);
    let lines: Vec<Value> = std::fs::read_to_string(&scores).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().all(|l| l["estimator"] == "map-rfr" && l["orientation"] == "higher_is_better"));
    assert_eq!(docdet(&["confidence", "dap", "--manifest", s(&m), "--ensemble-size", "4"]), EXIT_DATA);
}

#[test]
fn selection_and_active_learning() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "10");
    let scores = dir.path().join("pce.jsonl");
    assert_eq!(docdet(&["confidence", "pce", "--manifest", s(&m), "--out", s(&scores)]), EXIT_OK);
    let sel = dir.path().join("sel.json");
    assert_eq!(docdet(&["select", "--scores", s(&scores), "--strategy", "highest", "--budget", "2", "--out", s(&sel)]), EXIT_OK);
    let v = read_json(&sel);
    assert_eq!(v["annotation_mode"], "auto_label");
    assert_eq!(v["selected"].as_array().unwrap().len(), 2);

    let cfg = dir.path().join("al.json");
    std::fs::write(
        &cfg,
        r#"{"strategy": "lowest", "schedule": {"quantile": 0.5}, "max_iterations": 3,
            "seed": 1, "manifest": "ds/manifest.jsonl", "estimator": "dov", "ensemble_size": 3,
            "trainer_command": "test -f {manifest}"}"#,
    )
    .unwrap();
    let al = dir.path().join("al");
    assert_eq!(docdet(&["al-run", "--config", s(&cfg), "--out-dir", s(&al), "--out", s(&dir.path().join("al.out"))]), EXIT_OK);
    assert_eq!(docdet(&["al-run", "--replay", s(&al.join("ledger.jsonl")), "--out", s(&dir.path().join("r.json"))]), EXIT_OK);
    assert_eq!(read_json(&dir.path().join("r.json"))["identical"], true);

    let ledger = std::fs::read_to_string(al.join("ledger.jsonl")).unwrap();
    let tampered: Vec<String> = ledger
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            if v["record"] == "iteration" && v["iteration"] == 0 {
                v["selected"][0] = serde_json::json!("page-99999");
            }
            v.to_string()
        })
        .collect();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, tampered.join("\n") + "\n").unwrap();
    assert_eq!(docdet(&["al-run", "--replay", s(&bad), "--out", s(&dir.path().join("r2.json"))]), EXIT_DATA);
}
