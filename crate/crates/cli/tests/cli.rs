use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pyrprune::pyramid::{PyramidConfig, PyramidGeometry};
use pyrprune::raster::RasterImage;
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pyrprune"));
    c.env_remove("DIP_THREADS");
    c
}

fn call(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = call(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn json_file(p: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gray(dir: &Path, name: &str, w: usize, h: usize) -> PathBuf {
    let img = RasterImage::from_fn(w, h, 1, |x, y, _| ((x * 7 + y * 3) % 200) as u8 + 30).unwrap();
    let p = dir.join(name);
    img.save_pnm(&p).unwrap();
    p
}

/// Manifest of a 4000x4000 image (geometry only) and the oracle file that
/// plants one bump on 50 finest tiles spread over all 36 middle tiles.
fn scenario(dir: &Path) -> (PathBuf, PathBuf) {
    let img = gray(dir, "big.pgm", 4000, 4000);
    let out = dir.join("pyr");
    ok(&["build", "--image", s(&img), "--out", s(&out), "--no-tiles"]);
    let g = PyramidGeometry::plan(4000, 4000, &PyramidConfig::default()).unwrap();
    let finest = g.level(3).unwrap();
    let mut spots = Vec::new();
    for parent in 0..36 {
        let (r, c) = (parent / 6, parent % 6);
        let mut tiles = vec![(2 * r, 2 * c)];
        if parent < 14 {
            tiles.push((2 * r + 1, 2 * c + 1));
        }
        for (r, c) in tiles {
            let b = finest.tile(r, c).unwrap().origin_bbox;
            let (x, y) = b.center();
            spots.push(json!({"x": x, "y": y, "sigma": 0.5 * b.width().min(b.height())}));
        }
    }
    let oracle = dir.join("oracle.json");
    fs::write(&oracle, json!({"spots": spots}).to_string()).unwrap();
    (out.join("manifest.json"), oracle)
}

#[test]
fn missing_image_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = call(&["build", "--image", "/no/such/image.ppm", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/image.ppm"));
}

#[test]
fn bad_flags_are_user_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, oracle) = scenario(dir.path());
    let out = dir.path().join("x");
    let o = call(&[
        "prune", "--manifest", s(&manifest), "--provider", "oracle", "--oracle", s(&oracle), "--alpha", "1.5", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = call(&["prune", "--manifest", s(&manifest), "--provider", "file", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--maps"));
    assert_eq!(call(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(call(&["--help"]).status.code(), Some(0));
}

#[test]
fn build_writes_manifest_and_tiles() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = scenario(dir.path());
    let m = json_file(&manifest);
    let counts: Vec<usize> = m["levels"].as_array().unwrap().iter().map(|l| l["tiles"].as_array().unwrap().len()).collect();
    assert_eq!(counts, [9, 36, 144]);
    assert!(manifest.with_file_name("resolved_config.json").exists());

    let img = gray(dir.path(), "small.pgm", 700, 500);
    let out = dir.path().join("small");
    let printed = ok(&["build", "--image", s(&img), "--out", s(&out)]);
    assert_eq!(printed.trim(), s(&out.join("manifest.json")));
    let m = json_file(out.join("manifest.json"));
    assert_eq!(m["levels"][0]["grid"], json!([2, 3]));
    assert!(out.join("tiles/L1/r1_c2.ppm").exists());
    assert!(out.join("thumbnail.ppm").exists());
}

#[test]
fn tiny_image_gives_thumbnail_only_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let img = gray(dir.path(), "tiny.pgm", 100, 100);
    let out = dir.path().join("tiny");
    let o = call(&["build", "--image", s(&img), "--out", s(&out)]);
    assert!(o.status.success());
    let m = json_file(out.join("manifest.json"));
    assert_eq!(m["degenerate"], json!(true));
    assert_eq!(m["levels"].as_array().unwrap().len(), 1);
    assert_eq!(m["levels"][0]["pads"], json!([236, 236]));
}

#[test]
fn oracle_scenario_costs() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, oracle) = scenario(dir.path());
    let run = dir.path().join("run");
    ok(&[
        "prune", "--manifest", s(&manifest), "--provider", "oracle", "--oracle", s(&oracle), "--nmax", "80", "--out", s(&run),
    ]);
    let trace = json_file(run.join("trace.json"));
    let encoded: Vec<usize> = trace["iterations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|it| it["encoded_tiles"].as_array().unwrap().len())
        .collect();
    assert_eq!(encoded, [9, 36, 50]);
    let heat = RasterImage::load(run.join("heatmap.pgm")).unwrap();
    assert_eq!((heat.width(), heat.channels()), (1024, 1));

    let cost = dir.path().join("cost");
    let printed = ok(&["cost", "--trace", s(&run.join("trace.json")), "--comparison", "--out", s(&cost)]);
    assert!(printed.contains("36.61 TFLOPs"));
    let report = json_file(cost.join("cost.json"));
    assert_eq!(report["llm_tokens"], json!(2376));
    assert_eq!(report["encoder_tokens"], json!(55296));
    assert_eq!(report["total_tflops"], json!(36.61));
    let table = fs::read_to_string(cost.join("comparison.csv")).unwrap();
    assert!(table.contains("243.37"));
    assert!(cost.join("resolved_config.json").exists());
}

#[test]
fn full_traversal_and_depth_clamp() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, oracle) = scenario(dir.path());
    let full = dir.path().join("full");
    ok(&[
        "prune", "--manifest", s(&manifest), "--provider", "oracle", "--oracle", s(&oracle), "--alpha", "1.0", "--nmax", "999999",
        "--out", s(&full),
    ]);
    let t = json_file(full.join("trace.json"));
    assert_eq!(t["terminal_level"], json!(3));
    assert_eq!(t["retained"].as_array().unwrap().len(), 144 * 144);

    let deep = dir.path().join("deep");
    ok(&[
        "prune", "--manifest", s(&manifest), "--provider", "oracle", "--oracle", s(&oracle), "--depth", "5", "--out", s(&deep),
    ]);
    let t = json_file(deep.join("trace.json"));
    assert_eq!(t["depth_limit"], json!(3));
    assert_eq!(t["terminal_level"], json!(3));
    assert_eq!(t["notes"].as_array().unwrap().len(), 1);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, oracle) = scenario(dir.path());
    let cfg = dir.path().join("prune.json");
    fs::write(&cfg, r#"{"alpha": 0.5, "n_max": 3, "retain": "concat", "depth": "dynamic"}"#).unwrap();
    let out = dir.path().join("o");
    ok(&[
        "prune", "--manifest", s(&manifest), "--provider", "oracle", "--oracle", s(&oracle), "--config", s(&cfg), "--nmax", "80",
        "--out", s(&out),
    ]);
    let resolved = json_file(out.join("resolved_config.json"));
    assert_eq!(resolved["config"]["prune"], json!({"alpha": 0.5, "n_max": 80, "retain": "concat", "depth": "dynamic"}));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, oracle) = scenario(dir.path());
    let outs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for (o, threads) in outs.iter().zip(["1", "3"]) {
        let o = bin()
            .env("DIP_THREADS", threads)
            .args(["prune", "--manifest", s(&manifest), "--provider", "oracle", "--oracle", s(&oracle), "--out", s(o)])
            .output()
            .unwrap();
        assert!(o.status.success());
    }
    for f in ["trace.json", "heatmap.pgm", "resolved_config.json"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn recall_over_cli_traces() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, oracle) = scenario(dir.path());
    let run = dir.path().join("img1");
    ok(&["prune", "--manifest", s(&manifest), "--provider", "oracle", "--oracle", s(&oracle), "--out", s(&run)]);
    let regions = dir.path().join("regions.jsonl");
    // the first planted tile, and a corner far from every bump
    let g = PyramidGeometry::plan(4000, 4000, &PyramidConfig::default()).unwrap();
    let hot = g.level(3).unwrap().tile(0, 0).unwrap().origin_bbox.to_array();
    fs::write(
        &regions,
        format!(
            "{}\n{}\n",
            json!({"image": "img1", "bbox": hot}),
            json!({"image": "img1", "bbox": [3800.0, 3800.0, 3990.0, 3990.0]})
        ),
    )
    .unwrap();
    let out = dir.path().join("recall");
    ok(&["eval", "recall", "--traces", s(&run), "--regions", s(&regions), "--out", s(&out)]);
    let r = json_file(out.join("recall.json"));
    assert_eq!((r["total"].clone(), r["hits"].clone()), (json!(2), json!(1)));
}

#[test]
fn vqa_with_gold_predictions_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [("a", "how many", "count", "3"), ("a", "what colour", "color", "red"), ("b", "is it urban", "rural/urban", "rural")];
    let mut qs = String::new();
    let mut ps = String::new();
    for (img, q, t, ans) in rows {
        qs += &format!("{}\n", json!({"image": img, "question": q, "type": t, "answer": ans}));
        ps += &format!("{}\n", json!({"image": img, "question": q, "prediction": ans}));
    }
    fs::write(dir.path().join("q.jsonl"), qs).unwrap();
    fs::write(dir.path().join("p.jsonl"), ps).unwrap();
    let out = dir.path().join("vqa");
    ok(&[
        "eval", "vqa", "--questions", s(&dir.path().join("q.jsonl")), "--predictions", s(&dir.path().join("p.jsonl")), "--out", s(&out),
    ]);
    let m = json_file(out.join("metrics.json"));
    assert_eq!(m["average"], json!(1.0));
    assert_eq!(m["overall"], json!(1.0));
    let csv = fs::read_to_string(out.join("accuracy.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with(",avg"));
}

#[test]
fn refgen_reads_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.jsonl");
    let one = json!({"image": "x", "width": 1000.0, "height": 1000.0, "objects": [
        {"category": "ship", "bbox": [10.0, 10.0, 60.0, 60.0]},
        {"category": "car", "bbox": [500.0, 500.0, 540.0, 530.0]},
    ]});
    fs::write(&labels, format!("{one}\n{one}\n")).unwrap();
    let out = dir.path().join("refs");
    ok(&["refgen", "--labels", s(&labels), "--out", s(&out)]);
    let refs = json_file(out.join("references.json"));
    let names: Vec<&str> = refs.as_array().unwrap().iter().map(|r| r["reference"].as_str().unwrap()).collect();
    assert_eq!(names, ["the only car", "the only ship", "the only car", "the only ship"]);
}

#[test]
fn distill_writes_a_usable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("task.json");
    fs::write(&cfg, r#"{"train_images": 4, "test_images": 4, "steps": 40, "lr": 0.05}"#).unwrap();
    let out = dir.path().join("rfm");
    ok(&["distill", "--config", s(&cfg), "--steps", "30", "--out", s(&out)]);
    let summary = json_file(out.join("summary.json"));
    assert_eq!(summary["steps"], json!(30));
    assert!(summary["final_loss"].as_f64().unwrap() < summary["initial_loss"].as_f64().unwrap());
    let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 31);
    assert_eq!(json_file(out.join("resolved_config.json"))["config"]["steps"], json!(30));

    // score a small image with the trained stack
    let img = gray(dir.path(), "scene.pgm", 64, 64);
    let pyr = dir.path().join("scene");
    ok(&["build", "--image", s(&img), "--tile-size", "32", "--min-side", "64", "--thumbnail-size", "32", "--out", s(&pyr)]);
    let run = dir.path().join("scene_run");
    ok(&[
        "prune", "--manifest", s(&pyr.join("manifest.json")), "--provider", "rfm", "--checkpoint", s(&out.join("student.twts")),
        "--tokens-per-side", "4", "--thumbnail-side", "4", "--out", s(&run),
    ]);
    let t = json_file(run.join("trace.json"));
    assert_eq!(t["provider"], json!("rfm"));
    assert_eq!(t["retained"].as_array().unwrap().len(), 16);
}
