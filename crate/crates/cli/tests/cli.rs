use std::path::Path;
use std::process::{Command, Output};

use ctdiff_core::volume::{read_stack, read_volume, write_volume, HuVolume, Modality};
use ndarray::Array3;
use serde_json::Value;

fn ctdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctdiff")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(ctdiff(&["bogus"]).status.code(), Some(2));
    assert_eq!(ctdiff(&["simulate"]).status.code(), Some(2));
    assert_eq!(ctdiff(&["translate", "--checkpoint", "x"]).status.code(), Some(2));
    assert_eq!(ctdiff(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_one_and_record_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let r = ctdiff(&["--device", "cuda", "simulate", "--n", "2", "--out", s(out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("cpu"));
    let m = manifest(out);
    assert_eq!(m["status"], "failed");
    assert_eq!(m["command"], "simulate");

    let r = ctdiff(&["train", "--data", s(&out.join("missing")), "--out", s(&out.join("t"))]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(ctdiff(&["simulate", "--n", "2"]).status.code(), Some(1));
}

#[test]
fn simulate_layout_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    let r = ctdiff(&["simulate", "--n", "5", "--side", "16", "--holdout", "2", "--seed", "4", "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 5);
    let splits: Vec<&str> = rows.iter().map(|r| r["split"].as_str().unwrap()).collect();
    assert_eq!(splits, ["train", "train", "train", "test", "test"]);
    let (cond, _) = read_volume(&out.join("test/condition/case-00004")).unwrap();
    let (target, _) = read_volume(&out.join("test/target/case-00004")).unwrap();
    assert_eq!(cond.modality(), Modality::Fdct);
    assert_eq!(target.modality(), Modality::Mdct);
    assert_eq!(cond.dims(), [1, 16, 16]);
    let m = manifest(&out);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 4);
}

#[test]
fn evaluate_identical_volumes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(ctdiff(&["simulate", "--n", "3", "--side", "16", "--holdout", "3", "--out", s(&data)]).status.success());
    let target = data.join("test/target");
    let eval = tmp.path().join("eval");
    let r = ctdiff(&[
        "evaluate",
        "--pred-root",
        s(&target),
        "--target-root",
        s(&target),
        "--mask-root",
        s(&data.join("test/mask")),
        "--out",
        s(&eval),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    let cases = report["per_case"].as_array().unwrap();
    assert_eq!(cases.len(), 3);
    for c in cases {
        assert_eq!(c["mse_hu2"], 0.0);
        assert_eq!(c["ssim"], 1.0);
    }
    let lesions: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(eval.join("lesion_preservation.json")).unwrap()).unwrap();
    for l in lesions {
        assert_eq!(l["preservation"], 1.0);
    }
}

#[test]
fn evaluate_reports_missing_prediction() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(ctdiff(&["simulate", "--n", "2", "--side", "16", "--holdout", "2", "--out", s(&data)]).status.success());
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let r = ctdiff(&[
        "evaluate",
        "--pred-root",
        s(&empty),
        "--target-root",
        s(&data.join("test/target")),
        "--out",
        s(&tmp.path().join("eval")),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no prediction for case-00000"));
}

fn write(dir: &Path, data: Array3<f32>, modality: Modality) {
    let v = HuVolume::new(data, [2.0, 0.5, 0.5], modality, "pair").unwrap();
    write_volume(dir, &v, None).unwrap();
}

#[test]
fn preprocess_drops_empty_slices_and_resizes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut fdct = Array3::<f32>::from_elem((4, 8, 8), 40.0);
    let mut mdct = Array3::<f32>::from_elem((4, 8, 8), 30.0);
    fdct.index_axis_mut(ndarray::Axis(0), 1).fill(-1000.0);
    mdct.index_axis_mut(ndarray::Axis(0), 3).fill(-1000.0);
    write(&tmp.path().join("f"), fdct, Modality::Fdct);
    write(&tmp.path().join("m"), mdct, Modality::Mdct);
    let out = tmp.path().join("pre");
    let r = ctdiff(&[
        "preprocess",
        "--fdct",
        s(&tmp.path().join("f")),
        "--mdct",
        s(&tmp.path().join("m")),
        "--side",
        "16",
        "--out",
        s(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let (a, meta) = read_stack(&out.join("fdct")).unwrap();
    let (b, _) = read_stack(&out.join("mdct")).unwrap();
    assert_eq!(a.source_index_map(), [0, 2]);
    assert_eq!(b.source_index_map(), [0, 2]);
    assert_eq!(a.square_side(), Some(16));
    assert_eq!(meta.spacing_mm, [2.0, 0.25, 0.25]);
}
