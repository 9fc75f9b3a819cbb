//! Plain-Rust side of the demo; the exported functions in `lib.rs` wrap it.

use pyrprune::cost::{anyres_tokens, baseline_flops, pipeline_report, tflops, CostParams, Schedule};
use pyrprune::prune::{heatmap, run, DepthMode, HeatmapOracle, HotSpot, LayoutConfig, PruneConfig, PruneTrace, RetainMode};
use pyrprune::pyramid::{PyramidConfig, PyramidGeometry};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub type DemoResult<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelView {
    pub p: usize,
    pub rows: usize,
    pub cols: usize,
    /// Original-image boxes of the tiles, row-major.
    pub tiles: Vec<[f64; 4]>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LayoutView {
    pub width: usize,
    pub height: usize,
    pub thumbnail: [usize; 2],
    pub degenerate: bool,
    pub levels: Vec<LevelView>,
}

pub fn layout(width: usize, height: usize, tile_size: usize, min_side: usize) -> DemoResult<LayoutView> {
    let cfg = PyramidConfig {
        tile_size,
        min_side,
        thumbnail_size: tile_size,
    };
    let g = PyramidGeometry::plan(width, height, &cfg).map_err(err)?;
    let (tw, th) = g.thumbnail_content();
    Ok(LayoutView {
        width,
        height,
        thumbnail: [tw, th],
        degenerate: g.degenerate,
        levels: g
            .levels
            .iter()
            .map(|l| LevelView {
                p: l.index,
                rows: l.grid.rows,
                cols: l.grid.cols,
                tiles: l.tiles().map(|t| t.origin_bbox.to_array()).collect(),
            })
            .collect(),
    })
}

/// Everything the page sends for a pruning run.
#[derive(Clone, Debug, Deserialize)]
pub struct PruneRequest {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_tile")]
    pub tile_size: usize,
    #[serde(default = "default_min_side")]
    pub min_side: usize,
    pub spots: Vec<HotSpot>,
    #[serde(default)]
    pub background: f64,
    pub alpha: f64,
    pub n_max: usize,
    #[serde(default)]
    pub concat: bool,
    /// Fixed layer count; dynamic when absent.
    #[serde(default)]
    pub depth: Option<usize>,
}

fn default_tile() -> usize {
    336
}

fn default_min_side() -> usize {
    1008
}

#[derive(Debug)]
pub struct PruneRun {
    pub geometry: PyramidGeometry,
    pub trace: PruneTrace,
}

pub fn prune(req: &PruneRequest) -> DemoResult<PruneRun> {
    let cfg = PyramidConfig {
        tile_size: req.tile_size,
        min_side: req.min_side,
        thumbnail_size: req.tile_size,
    };
    let geometry = PyramidGeometry::plan(req.width, req.height, &cfg).map_err(err)?;
    let mut oracle = HeatmapOracle {
        spots: req.spots.clone(),
        background: req.background,
    };
    let prune = PruneConfig {
        alpha: req.alpha,
        n_max: req.n_max,
        retain: if req.concat { RetainMode::Concat } else { RetainMode::Select },
        depth: req.depth.map_or(DepthMode::Dynamic, DepthMode::Fixed),
    };
    let trace = run(&geometry, &mut oracle, LayoutConfig::default(), &prune).map_err(err)?;
    Ok(PruneRun { geometry, trace })
}

impl PruneRun {
    /// Per-level tile decisions for drawing over the layout.
    pub fn summary(&self) -> serde_json::Value {
        let levels: Vec<_> = self
            .trace
            .iterations
            .iter()
            .map(|it| {
                json!({
                    "level": it.level,
                    "encoded": it.encoded_tiles,
                    "key_tiles": it.key_tiles,
                    "selected": it.selected.len(),
                    "scored": it.n_scored,
                    "branch": it.branch,
                })
            })
            .collect();
        json!({
            "levels": levels,
            "terminal_level": self.trace.terminal_level,
            "retained": self.trace.retained.len(),
            "llm_vision_tokens": self.trace.llm_vision_tokens(),
            "notes": self.trace.notes,
        })
    }

    /// Grayscale heatmap as RGBA bytes with its size.
    pub fn heatmap_rgba(&self) -> DemoResult<(usize, usize, Vec<u8>)> {
        let img = heatmap::render(&self.geometry, &self.trace).map_err(err)?;
        let rgba = img.data().iter().flat_map(|&v| [v, v, v, 255]).collect();
        Ok((img.width(), img.height(), rgba))
    }

    /// Cost of this run next to grid cropping of the finest level.
    pub fn cost(&self) -> DemoResult<serde_json::Value> {
        let p = CostParams::default();
        let report = pipeline_report(&self.trace, &p).map_err(err)?;
        let finest = self.geometry.levels.last().map_or(0, |l| l.tile_count()) as u64;
        let (enc, llm) = anyres_tokens(finest, &p);
        Ok(json!({
            "pyramid": report,
            "grid_crop": {
                "tiles": finest,
                "encoder_tokens": enc,
                "llm_tokens": llm,
                "tflops": tflops(baseline_flops(finest, &Schedule::Full, &p)),
            },
        }))
    }
}
