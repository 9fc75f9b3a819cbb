use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pyrprune::cost::{comparison_csv, comparison_table, pipeline_report, CostParams};
use pyrprune::distill::task::{SyntheticTask, TaskConfig};
use pyrprune::distill::{curve_csv, train};
use pyrprune::eval::refgen::{extract_unique_references, ImageLabels};
use pyrprune::eval::vqa::{accuracy_csv, score_dataset, AnswerScorer, Lexicon, Taxonomy};
use pyrprune::eval::{parse_jsonl, read_jsonl, trace_recall, GroundTruthRegion};
use pyrprune::prune::encoder::{EncoderConfig, TileEncoder};
use pyrprune::prune::{heatmap, run, AttentionProvider, FileProvider, HeatmapOracle, LayoutConfig, PruneConfig, PruneTrace, RfmProvider};
use pyrprune::pyramid::{ImagePyramid, PyramidConfig, PyramidGeometry, PyramidManifest};
use pyrprune::raster::RasterImage;
use pyrprune::toyattn::{checkpoint_sidecar, decode_checkpoint, encode_checkpoint};
use serde_json::{json, Value};

use crate::args::*;
use crate::output::{read_json, OutDir};

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Build(a) => build(a),
        Command::Prune(a) => prune(a),
        Command::Distill(a) => distill(a),
        Command::Cost(a) => cost(a),
        Command::Eval(EvalCommand::Recall(a)) => recall(a),
        Command::Eval(EvalCommand::Vqa(a)) => vqa(a),
        Command::Refgen(a) => refgen(a),
    }
}

fn build(a: &BuildArgs) -> Result<()> {
    let cfg = PyramidConfig {
        tile_size: a.tile_size,
        min_side: a.min_side,
        thumbnail_size: a.thumbnail_size,
    };
    cfg.validate()?;
    let img = RasterImage::load(&a.image).with_context(|| format!("loading {}", a.image.display()))?;
    let out = OutDir::create(&a.out)?;
    let image_path = a.image.to_string_lossy().into_owned();

    let (manifest, tiles) = if a.no_tiles {
        let g = PyramidGeometry::plan(img.width(), img.height(), &cfg)?;
        (g.to_manifest(Some(image_path), a.gsd), 0)
    } else {
        let pyr = ImagePyramid::build(&img, &cfg)?;
        let n = pyr.dump_tiles(out.path("tiles"))?;
        pyr.thumbnail.to_rgb().save_pnm(out.path("thumbnail.ppm"))?;
        (pyr.geometry.to_manifest(Some(image_path), a.gsd), n)
    };

    let path = out.write_json("manifest.json", &manifest)?;
    out.resolved(
        "build",
        &json!({
            "image": a.image,
            "pyramid": cfg,
            "gsd": a.gsd,
            "tiles": !a.no_tiles,
        }),
    )?;
    if manifest.degenerate {
        eprintln!("note: image fits in one tile; the pyramid has a single level");
    }
    let counts: Vec<usize> = manifest.levels.iter().map(|l| l.tiles.len()).collect();
    eprintln!("levels {counts:?}, {tiles} tiles written");
    println!("{}", path.display());
    Ok(())
}

fn load_manifest(path: &Path) -> Result<(PyramidManifest, PyramidGeometry)> {
    let m: PyramidManifest = read_json(path)?;
    let g = PyramidGeometry::from_manifest(&m).with_context(|| format!("checking {}", path.display()))?;
    Ok((m, g))
}

/// Config file values first, then explicit flags.
fn resolve_prune_config(a: &PruneArgs) -> Result<PruneConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_json(p)?,
        None => PruneConfig::default(),
    };
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.nmax {
        cfg.n_max = v;
    }
    if let Some(v) = a.retain {
        cfg.retain = v.into();
    }
    if let Some(v) = a.depth {
        cfg.depth = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str, provider: &str) -> Result<&'a PathBuf> {
    v.as_ref()
        .with_context(|| format!("--provider {provider} needs {flag}"))
}

fn prune(a: &PruneArgs) -> Result<()> {
    let cfg = resolve_prune_config(a)?;
    let layout = LayoutConfig {
        tokens_per_tile_side: a.tokens_per_side,
        thumbnail_side: a.thumbnail_side,
    };
    layout.validate()?;
    let (manifest, geom) = load_manifest(&a.manifest)?;

    let mut sources = serde_json::Map::new();
    let mut trace = match a.provider {
        ProviderKind::Oracle => {
            let path = required(&a.oracle, "--oracle", "oracle")?;
            sources.insert("oracle".into(), json!(path));
            let mut p = HeatmapOracle::load(path).with_context(|| format!("loading {}", path.display()))?;
            run_with(&geom, &mut p, layout, &cfg)?
        }
        ProviderKind::File => {
            let dir = required(&a.maps, "--maps", "file")?;
            sources.insert("maps".into(), json!(dir));
            let mut p = FileProvider::from_dir(dir).with_context(|| format!("loading maps from {}", dir.display()))?;
            run_with(&geom, &mut p, layout, &cfg)?
        }
        ProviderKind::Rfm => {
            let ckpt = required(&a.checkpoint, "--checkpoint", "rfm")?;
            let enc_path = a
                .encoder
                .clone()
                .unwrap_or_else(|| ckpt.with_file_name("encoder.json"));
            let image = match (&a.image, &manifest.image.path) {
                (Some(p), _) => p.clone(),
                (None, Some(p)) => PathBuf::from(p),
                (None, None) => bail!("--provider rfm needs --image when the manifest has no image path"),
            };
            sources.insert("checkpoint".into(), json!(ckpt));
            sources.insert("encoder".into(), json!(enc_path));
            sources.insert("image".into(), json!(image));

            let bytes = fs::read(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
            let stack = decode_checkpoint(&bytes)?;
            let enc_cfg: EncoderConfig = read_json(&enc_path)?;
            if enc_cfg.dim != stack.config.model_dim {
                bail!(
                    "encoder width {} does not match checkpoint width {}",
                    enc_cfg.dim,
                    stack.config.model_dim
                );
            }
            let encoder = TileEncoder::new(enc_cfg)?;
            let img = RasterImage::load(&image).with_context(|| format!("loading {}", image.display()))?;
            if (img.width(), img.height()) != (manifest.image.width, manifest.image.height) {
                bail!("{} is not the image the manifest was built from", image.display());
            }
            let pyramid = ImagePyramid::build(&img, &manifest.config)?;
            let mut p = RfmProvider {
                stack: &stack,
                encoder: &encoder,
                pyramid: &pyramid,
            };
            run_with(&geom, &mut p, layout, &cfg)?
        }
    };
    trace.image.id = a.id.clone();

    let out = OutDir::create(&a.out)?;
    out.write_json("trace.json", &trace)?;
    heatmap::render(&geom, &trace)?.save_pnm(out.path("heatmap.pgm"))?;
    out.resolved(
        "prune",
        &json!({
            "manifest": a.manifest,
            "provider": trace.provider,
            "sources": sources,
            "prune": cfg,
            "layout": layout,
            "id": a.id,
        }),
    )?;
    for n in &trace.notes {
        eprintln!("note: {n}");
    }
    println!(
        "terminal level {} of {}, {} hr tokens retained, {} vision tokens to the language model",
        trace.terminal_level,
        trace.levels_total,
        trace.retained.len(),
        trace.llm_vision_tokens()
    );
    Ok(())
}

fn run_with(
    geom: &PyramidGeometry,
    provider: &mut dyn AttentionProvider,
    layout: LayoutConfig,
    cfg: &PruneConfig,
) -> Result<PruneTrace> {
    Ok(run(geom, provider, layout, cfg)?)
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn distill(a: &DistillArgs) -> Result<()> {
    let mut doc = serde_json::to_value(TaskConfig::default())?;
    if let Some(p) = &a.config {
        merge(&mut doc, read_json::<Value>(p)?);
    }
    let mut cfg: TaskConfig = serde_json::from_value(doc).context("task config")?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }

    let out = OutDir::create(&a.out)?;
    out.resolved("distill", &cfg)?;
    let task = SyntheticTask::build(cfg.clone())?;
    let before = {
        let student = pyrprune::toyattn::init_student_from_teacher(&task.teacher, &cfg.student.teacher_indices)?;
        task.recall(&student, &task.test)?
    };
    let outcome = train(&task.teacher, &task.train_sequences()?, &cfg.train_config())?;
    let after = task.recall(&outcome.student, &task.test)?;

    out.write("student.twts", encode_checkpoint(&outcome.student))?;
    out.write_json("student.json", &checkpoint_sidecar(&outcome.student))?;
    out.write_json("encoder.json", &task.encoder.config)?;
    out.write("loss.csv", curve_csv(&outcome.curve))?;
    let first = outcome.curve[0];
    let last = *outcome.curve.last().expect("curve has the final loss");
    out.write_json(
        "summary.json",
        &json!({
            "steps": cfg.steps,
            "initial_loss": first,
            "final_loss": last,
            "loss_ratio": last / first,
            "test_recall_before": before,
            "test_recall_after": after,
        }),
    )?;
    println!("loss {first:.6} -> {last:.6}, test recall {before:.3} -> {after:.3}");
    Ok(())
}

fn cost(a: &CostArgs) -> Result<()> {
    if a.trace.is_none() && !a.comparison {
        bail!("nothing to do: pass --trace, --comparison, or both");
    }
    let params: CostParams = match &a.params {
        Some(p) => read_json(p)?,
        None => CostParams::default(),
    };
    params.validate()?;
    let out = OutDir::create(&a.out)?;
    out.resolved(
        "cost",
        &json!({"trace": a.trace, "params": params, "comparison": a.comparison}),
    )?;
    if let Some(t) = &a.trace {
        let trace: PruneTrace = read_json(t)?;
        let report = pipeline_report(&trace, &params)?;
        out.write_json("cost.json", &report)?;
        println!(
            "{} encoder tokens, {} LLM tokens, {:.2} TFLOPs",
            report.encoder_tokens, report.llm_tokens, report.total_tflops
        );
    }
    if a.comparison {
        out.write("comparison.csv", comparison_csv(&comparison_table(&params)?))?;
    }
    Ok(())
}

/// Trace files keyed by image id; without an id, by the file stem, or by
/// the directory name for `trace.json`.
fn collect_traces(paths: &[PathBuf]) -> Result<HashMap<String, PruneTrace>> {
    let mut out = HashMap::new();
    for p in paths {
        let file = if p.is_dir() { p.join("trace.json") } else { p.clone() };
        let trace: PruneTrace = read_json(&file)?;
        let key = match &trace.image.id {
            Some(id) => id.clone(),
            None if file.file_name().is_some_and(|n| n == "trace.json") => file
                .parent()
                .and_then(|d| d.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            None => file
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        if out.insert(key.clone(), trace).is_some() {
            bail!("two traces for image '{key}'");
        }
    }
    Ok(out)
}

fn recall(a: &RecallArgs) -> Result<()> {
    let traces = collect_traces(&a.traces)?;
    let regions: Vec<GroundTruthRegion> = read_jsonl(&a.regions).with_context(|| format!("reading {}", a.regions.display()))?;
    let report = trace_recall(&traces, &regions);
    let out = OutDir::create(&a.out)?;
    out.resolved("eval recall", &json!({"traces": a.traces, "regions": a.regions}))?;
    out.write_json("recall.json", &report)?;
    for s in &report.skipped {
        eprintln!("skipped {s}");
    }
    println!("recall {:.4} ({}/{})", report.recall, report.hits, report.total);
    Ok(())
}

fn vqa(a: &VqaArgs) -> Result<()> {
    let questions = read_jsonl(&a.questions).with_context(|| format!("reading {}", a.questions.display()))?;
    let preds = read_jsonl(&a.predictions).with_context(|| format!("reading {}", a.predictions.display()))?;
    let scorer = AnswerScorer {
        lexicon: match &a.lexicon {
            Some(p) => Lexicon::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => Lexicon::default(),
        },
        taxonomy: match &a.taxonomy {
            Some(p) => Some(Taxonomy::load(p).with_context(|| format!("loading {}", p.display()))?),
            None => None,
        },
        threshold: a.threshold,
    };
    let report = score_dataset(&questions, &preds, &scorer);
    let out = OutDir::create(&a.out)?;
    out.resolved(
        "eval vqa",
        &json!({
            "questions": a.questions,
            "predictions": a.predictions,
            "lexicon": a.lexicon,
            "taxonomy": a.taxonomy,
            "threshold": a.threshold,
        }),
    )?;
    out.write_json("metrics.json", &report)?;
    out.write("accuracy.csv", accuracy_csv(&report))?;
    if report.missing_predictions > 0 {
        eprintln!("{} questions have no prediction", report.missing_predictions);
    }
    println!("average accuracy {:.4}, overall {:.4}", report.average, report.overall);
    Ok(())
}

fn parse_labels(text: &str) -> Result<Vec<ImageLabels>> {
    match serde_json::from_str::<Value>(text) {
        Ok(v @ Value::Array(_)) => Ok(serde_json::from_value(v)?),
        Ok(v @ Value::Object(_)) => Ok(vec![serde_json::from_value(v)?]),
        Ok(_) => bail!("expected a label object, an array of them, or JSONL"),
        Err(_) => Ok(parse_jsonl(text)?),
    }
}

fn refgen(a: &RefgenArgs) -> Result<()> {
    let text = fs::read_to_string(&a.labels).with_context(|| format!("reading {}", a.labels.display()))?;
    let labels = parse_labels(&text).with_context(|| format!("parsing {}", a.labels.display()))?;
    let mut refs = Vec::new();
    for l in &labels {
        refs.extend(extract_unique_references(l)?);
    }
    let out = OutDir::create(&a.out)?;
    out.resolved("refgen", &json!({"labels": a.labels}))?;
    out.write_json("references.json", &refs)?;
    println!("{} references from {} images", refs.len(), labels.len());
    Ok(())
}
