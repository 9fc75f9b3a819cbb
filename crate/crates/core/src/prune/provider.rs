//! Sources of per-token relevance scores for the pruning loop.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prune::encoder::TileEncoder;
use crate::prune::layout::LevelLayout;
use crate::pyramid::{ImagePyramid, PyramidGeometry, Rect};
use crate::toyattn::{AttentionRecord, DecoderStack};

/// What a provider sees when asked to score one level.
pub struct LevelContext<'a> {
    pub geometry: &'a PyramidGeometry,
    pub layout: &'a LevelLayout,
}

pub trait AttentionProvider {
    fn name(&self) -> &'static str;

    /// One non-negative score per scored (non-newline) token of
    /// `ctx.layout`, in layout order.
    fn scores(&mut self, ctx: &LevelContext<'_>) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotSpot {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// Planted heatmap in original-image coordinates: a token scores the
/// strongest Gaussian bump evaluated at its cell center, plus a constant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeatmapOracle {
    pub spots: Vec<HotSpot>,
    #[serde(default)]
    pub background: f64,
}

impl HeatmapOracle {
    /// One bump per rectangle, centred on it with sigma = half its shorter side.
    pub fn from_rects(rects: &[Rect]) -> Self {
        Self {
            spots: rects
                .iter()
                .map(|r| {
                    let (x, y) = r.center();
                    HotSpot {
                        x,
                        y,
                        sigma: 0.5 * r.width().min(r.height()).max(1e-9),
                        weight: 1.0,
                    }
                })
                .collect(),
            background: 0.0,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let oracle: Self = serde_json::from_slice(&fs::read(path)?)?;
        if oracle.background < 0.0
            || oracle
                .spots
                .iter()
                .any(|s| !(s.sigma > 0.0) || s.weight < 0.0 || !s.x.is_finite() || !s.y.is_finite())
        {
            return Err(Error::format("oracle", "sigma must be positive and weights non-negative"));
        }
        Ok(oracle)
    }

    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let bump = self
            .spots
            .iter()
            .map(|s| {
                let d2 = (x - s.x).powi(2) + (y - s.y).powi(2);
                s.weight * (-0.5 * d2 / (s.sigma * s.sigma)).exp()
            })
            .fold(0.0, f64::max);
        self.background + bump
    }
}

impl AttentionProvider for HeatmapOracle {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn scores(&mut self, ctx: &LevelContext<'_>) -> Result<Vec<f64>> {
        Ok((0..ctx.layout.n_scored())
            .map(|i| {
                let (x, y) = ctx.layout.center(ctx.geometry, i);
                self.value_at(x, y)
            })
            .collect())
    }
}

/// Scores loaded from attention-map files, one per level (`level{p}.attn`).
///
/// Each map's last layer is head-averaged and its last row used. Columns
/// cover every tile of the level in full-grid order (tile row-major, then
/// in-tile row-major, no newlines), optionally preceded by thumbnail
/// columns; the provider gathers the columns of the encoded tiles.
#[derive(Clone, Debug, Default)]
pub struct FileProvider {
    maps: BTreeMap<usize, Array1<f64>>,
}

impl FileProvider {
    pub fn from_records(records: BTreeMap<usize, AttentionRecord>) -> Result<Self> {
        let mut maps = BTreeMap::new();
        for (p, rec) in records {
            let n_layers = rec.layers.len();
            if n_layers == 0 || rec.layers[n_layers - 1].is_empty() || rec.layers[n_layers - 1][0].nrows() == 0 {
                return Err(Error::format("attention map", format!("level {p} map is empty")));
            }
            maps.insert(p, rec.head_mean_last_row(n_layers));
        }
        Ok(Self { maps })
    }

    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut records = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(p) = name
                .strip_prefix("level")
                .and_then(|s| s.strip_suffix(".attn"))
                .and_then(|s| s.parse::<usize>().ok())
            else {
                continue;
            };
            records.insert(p, AttentionRecord::decode(&fs::read(&path)?)?);
        }
        if records.is_empty() {
            return Err(Error::invalid("no level{p}.attn files found"));
        }
        Self::from_records(records)
    }
}

impl AttentionProvider for FileProvider {
    fn name(&self) -> &'static str {
        "file"
    }

    fn scores(&mut self, ctx: &LevelContext<'_>) -> Result<Vec<f64>> {
        let p = ctx.layout.level;
        let map = self
            .maps
            .get(&p)
            .ok_or_else(|| Error::invalid(format!("no attention map for level {p}")))?;
        let level = ctx.geometry.level(p).expect("layout level exists");
        let full = level.tile_count() * ctx.layout.config.tokens_per_tile();
        let offset = match map.len() {
            n if n == full => 0,
            n if n == full + ctx.layout.config.thumbnail_tokens() => ctx.layout.config.thumbnail_tokens(),
            n => {
                return Err(Error::ScoreLength {
                    level: p,
                    expected: full,
                    got: n,
                })
            }
        };
        Ok((0..ctx.layout.n_scored())
            .map(|i| map[offset + ctx.layout.full_grid_index(level, i)].max(0.0))
            .collect())
    }
}

/// Head-averaged last-layer attention of a trained focus stack, read from
/// the last text token.
pub struct RfmProvider<'a> {
    pub stack: &'a DecoderStack,
    pub encoder: &'a TileEncoder,
    pub pyramid: &'a ImagePyramid,
}

impl AttentionProvider for RfmProvider<'_> {
    fn name(&self) -> &'static str {
        "rfm"
    }

    fn scores(&mut self, ctx: &LevelContext<'_>) -> Result<Vec<f64>> {
        let seq = self.encoder.sequence(self.pyramid, ctx.layout)?;
        let (_, rec) = self.stack.forward(&seq)?;
        let row = rec.head_mean_last_row(self.stack.layers.len());
        let lr = seq.segments.lr;
        Ok(ctx.layout.scored.iter().map(|&t| row[lr + t]).collect())
    }
}

/// Wraps a full-level score vector as a 1-layer, 1-head, 1-row map.
pub fn scores_to_record(scores: &[f64]) -> AttentionRecord {
    AttentionRecord {
        layers: vec![vec![Array2::from_shape_vec((1, scores.len()), scores.to_vec())
            .expect("row shape matches")]],
    }
}

/// Scores every tile of every level with `provider` and returns the maps in
/// the file-provider layout.
pub fn export_level_maps(
    provider: &mut dyn AttentionProvider,
    geom: &PyramidGeometry,
    config: crate::prune::layout::LayoutConfig,
) -> Result<BTreeMap<usize, AttentionRecord>> {
    let mut out = BTreeMap::new();
    for level in &geom.levels {
        let layout = LevelLayout::full(geom, level.index, config)?;
        let s = provider.scores(&LevelContext { geometry: geom, layout: &layout })?;
        let mut full = vec![0.0; s.len()];
        for (i, v) in s.into_iter().enumerate() {
            full[layout.full_grid_index(level, i)] = v;
        }
        out.insert(level.index, scores_to_record(&full));
    }
    Ok(out)
}
