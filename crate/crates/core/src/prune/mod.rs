//! Coarse-to-fine tile selection and token pruning over a pyramid.
//!
//! Starting from every tile of the coarsest level, each iteration scores the
//! encoded tokens, keeps the top-alpha fraction, and maps the kept tokens to
//! tiles of the next finer level. If too many tiles would be needed the
//! current level is pruned and the loop stops; otherwise only the key tiles
//! are encoded at the next level. The finest reachable level is always
//! pruned. Thumbnail tokens are never pruned.

pub mod encoder;
pub mod heatmap;
pub mod layout;
pub mod provider;
pub mod select;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyramid::{PyramidGeometry, TileId};

pub use layout::{LayoutConfig, LevelLayout, TokenKind};
pub use provider::{AttentionProvider, FileProvider, HeatmapOracle, HotSpot, LevelContext, RfmProvider};
pub use select::{top_alpha, top_alpha_count, Selection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetainMode {
    /// Keep the pruned tokens of the terminal level only.
    Select,
    /// Keep the pruned tokens of every traversed level.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    Dynamic,
    /// Traverse exactly this many pyramid layers, thumbnail included,
    /// ignoring the tile threshold. Clamped to the pyramid depth.
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub alpha: f64,
    pub n_max: usize,
    pub retain: RetainMode,
    pub depth: DepthMode,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            n_max: 40,
            retain: RetainMode::Select,
            depth: DepthMode::Dynamic,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.n_max == 0 {
            return Err(Error::invalid("n_max must be at least 1"));
        }
        if let DepthMode::Fixed(l) = self.depth {
            if l < 2 {
                return Err(Error::invalid(format!(
                    "fixed depth counts the thumbnail and must be >= 2, got {l}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Descend,
    PruneAndBreak,
    PruneAtFinal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub level: usize,
    /// `[row, col]` of the tiles encoded at this level, row-major.
    pub encoded_tiles: Vec<[usize; 2]>,
    pub n_scored: usize,
    pub n_newlines: usize,
    /// Positions among the scored tokens, ascending.
    pub selected: Vec<usize>,
    /// Tiles of the next level hit by the selection; absent at the last level.
    pub key_tiles: Option<Vec<[usize; 2]>>,
    pub branch: Branch,
    pub all_zero: bool,
    pub stats: ScoreStats,
    /// Provider scores normalised to sum to one (reporting only).
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetainedToken {
    pub level: usize,
    pub tile: [usize; 2],
    /// In-tile `[row, col]`.
    pub cell: [usize; 2],
    /// Cell center in original-image pixels.
    pub center: [f64; 2],
    /// Cell in original-image pixels, clamped to the image.
    pub footprint: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceImage {
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneTrace {
    pub provider: String,
    pub config: PruneConfig,
    pub layout: LayoutConfig,
    pub image: TraceImage,
    /// Tile levels `P` of the pyramid.
    pub levels_total: usize,
    /// Deepest tile level the run was allowed to reach.
    pub depth_limit: usize,
    #[serde(default)]
    pub notes: Vec<String>,
    pub iterations: Vec<Iteration>,
    pub terminal_level: usize,
    pub retained: Vec<RetainedToken>,
    /// Newline delimiters of the terminal level, always kept.
    pub retained_newlines: usize,
    pub thumbnail_tokens: usize,
}

/// The decision content of a trace, without score values.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceDecisions {
    pub iterations: Vec<(usize, Vec<[usize; 2]>, Vec<usize>, Option<Vec<[usize; 2]>>, Branch, bool)>,
    pub terminal_level: usize,
    pub retained: Vec<RetainedToken>,
    pub retained_newlines: usize,
}

impl PruneTrace {
    /// Vision tokens handed to the language model (thumbnail + retained hr).
    pub fn llm_vision_tokens(&self) -> usize {
        self.thumbnail_tokens + self.retained.len()
    }

    pub fn decisions(&self) -> TraceDecisions {
        TraceDecisions {
            iterations: self
                .iterations
                .iter()
                .map(|it| {
                    (
                        it.level,
                        it.encoded_tiles.clone(),
                        it.selected.clone(),
                        it.key_tiles.clone(),
                        it.branch,
                        it.all_zero,
                    )
                })
                .collect(),
            terminal_level: self.terminal_level,
            retained: self.retained.clone(),
            retained_newlines: self.retained_newlines,
        }
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Tiles of level `next` containing the original-image center of any
/// selected token, row-major and de-duplicated. Centers outside the image
/// (padding cells) are clamped onto it first.
pub fn map_tokens_to_tiles(
    selected: &[usize],
    layout: &LevelLayout,
    geom: &PyramidGeometry,
    next: usize,
) -> Result<Vec<TileId>> {
    let level = geom
        .level(next)
        .ok_or_else(|| Error::invalid(format!("pyramid has no level {next}")))?;
    let w = geom.image_width as f64;
    let h = geom.image_height as f64;
    let mut tiles: Vec<TileId> = selected
        .iter()
        .filter_map(|&i| {
            let (x, y) = layout.center(geom, i);
            level.tile_at_origin(x.clamp(0.0, w), y.clamp(0.0, h))
        })
        .collect();
    tiles.sort();
    tiles.dedup();
    Ok(tiles)
}

fn stats(scores: &[f64]) -> (ScoreStats, Vec<f64>) {
    let sum: f64 = scores.iter().sum();
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let normalized = if sum > 0.0 {
        scores.iter().map(|s| s / sum).collect()
    } else {
        vec![1.0 / scores.len() as f64; scores.len()]
    };
    (
        ScoreStats {
            min,
            max,
            mean: sum / scores.len() as f64,
        },
        normalized,
    )
}

fn retained_tokens(selected: &[usize], layout: &LevelLayout, geom: &PyramidGeometry) -> Vec<RetainedToken> {
    selected
        .iter()
        .map(|&i| {
            let (tile, row, col) = layout.scored_token(i);
            let (cx, cy) = layout.center(geom, i);
            RetainedToken {
                level: layout.level,
                tile: [tile.row, tile.col],
                cell: [row, col],
                center: [cx, cy],
                footprint: layout.footprint(geom, i).to_array(),
            }
        })
        .collect()
}

/// Runs the pruning loop over `geom` with scores from `provider`.
pub fn run(
    geom: &PyramidGeometry,
    provider: &mut dyn AttentionProvider,
    layout_config: LayoutConfig,
    cfg: &PruneConfig,
) -> Result<PruneTrace> {
    cfg.validate()?;
    layout_config.validate()?;
    let total = geom.num_levels();
    let mut notes = Vec::new();
    let (limit, dynamic) = match cfg.depth {
        DepthMode::Dynamic => (total, true),
        DepthMode::Fixed(layers) => {
            let wanted = layers - 1;
            if wanted > total {
                notes.push(format!(
                    "fixed depth of {layers} layers exceeds the pyramid's {} layers; using the last layer",
                    total + 1
                ));
            }
            (wanted.min(total), false)
        }
    };

    let mut encoded: Vec<TileId> = geom
        .level(1)
        .ok_or_else(|| Error::invalid("pyramid has no tile levels"))?
        .tiles()
        .map(|t| t.id)
        .collect();
    let mut iterations = Vec::new();
    let mut retained = Vec::new();
    let mut terminal = None;

    for p in 1..=limit {
        let layout = LevelLayout::new(geom, p, &encoded, layout_config)?;
        let scores = provider.scores(&LevelContext { geometry: geom, layout: &layout })?;
        if scores.len() != layout.n_scored() {
            return Err(Error::ScoreLength {
                level: p,
                expected: layout.n_scored(),
                got: scores.len(),
            });
        }
        let sel = top_alpha(&scores, cfg.alpha)?;
        let (st, normalized) = stats(&scores);

        let (branch, key_tiles) = if p < limit {
            let keys = map_tokens_to_tiles(&sel.indices, &layout, geom, p + 1)?;
            if dynamic && keys.len() > cfg.n_max {
                (Branch::PruneAndBreak, Some(keys))
            } else {
                (Branch::Descend, Some(keys))
            }
        } else {
            (Branch::PruneAtFinal, None)
        };

        let this_level = retained_tokens(&sel.indices, &layout, geom);
        match (branch, cfg.retain) {
            (Branch::Descend, RetainMode::Concat) => retained.extend(this_level),
            (Branch::Descend, RetainMode::Select) => {}
            (_, _) => {
                retained.extend(this_level);
                terminal = Some((p, layout.n_newlines()));
            }
        }

        iterations.push(Iteration {
            level: p,
            encoded_tiles: layout.encoded_tiles.iter().map(|t| [t.row, t.col]).collect(),
            n_scored: layout.n_scored(),
            n_newlines: layout.n_newlines(),
            selected: sel.indices,
            key_tiles: key_tiles.as_ref().map(|k| k.iter().map(|t| [t.row, t.col]).collect()),
            branch,
            all_zero: sel.all_zero,
            stats: st,
            scores: normalized,
        });

        if branch != Branch::Descend {
            break;
        }
        encoded = key_tiles.expect("descending always has key tiles");
    }

    let (terminal_level, retained_newlines) = terminal.expect("the last iteration always prunes");
    Ok(PruneTrace {
        provider: provider.name().to_string(),
        config: *cfg,
        layout: layout_config,
        image: TraceImage {
            width: geom.image_width,
            height: geom.image_height,
            id: None,
        },
        levels_total: total,
        depth_limit: limit,
        notes,
        iterations,
        terminal_level,
        retained,
        retained_newlines,
        thumbnail_tokens: layout_config.thumbnail_tokens(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::{PyramidConfig, Rect};

    fn g4000() -> PyramidGeometry {
        PyramidGeometry::plan(4000, 4000, &PyramidConfig::default()).unwrap()
    }

    #[test]
    fn center_token_maps_to_one_tile() {
        let g = g4000();
        // the 1x1 token grid per tile puts a single token at each tile center
        let lc = LayoutConfig {
            tokens_per_tile_side: 1,
            thumbnail_side: 24,
        };
        let layout = LevelLayout::full(&g, 1, lc).unwrap();
        // tile (1,1) of level 1 has its center at the image center
        let center = layout.scored_index(TileId { level: 1, row: 1, col: 1 }, 0, 0).unwrap();
        let (x, y) = layout.center(&g, center);
        assert!((x - 2000.0).abs() < 1e-9 && (y - 2000.0).abs() < 1e-9);
        let tiles = map_tokens_to_tiles(&[center], &layout, &g, 2).unwrap();
        assert_eq!(tiles, vec![TileId { level: 2, row: 2, col: 2 }]);
    }

    #[test]
    fn all_tokens_select_all_tiles() {
        let g = g4000();
        let layout = LevelLayout::full(&g, 1, LayoutConfig::default()).unwrap();
        let all: Vec<usize> = (0..layout.n_scored()).collect();
        assert_eq!(map_tokens_to_tiles(&all, &layout, &g, 2).unwrap().len(), 36);
    }

    #[test]
    fn tiny_threshold_breaks_at_first_level() {
        let g = g4000();
        let mut oracle = HeatmapOracle::from_rects(&[
            Rect::new(0.0, 0.0, 500.0, 500.0),
            Rect::new(3500.0, 3500.0, 4000.0, 4000.0),
        ]);
        let cfg = PruneConfig {
            n_max: 1,
            ..PruneConfig::default()
        };
        let t = run(&g, &mut oracle, LayoutConfig::default(), &cfg).unwrap();
        assert_eq!(t.iterations.len(), 1);
        assert_eq!(t.iterations[0].branch, Branch::PruneAndBreak);
        assert_eq!(t.terminal_level, 1);
        assert_eq!(t.retained.len(), 324);
    }

    #[test]
    fn fixed_depth_is_clamped_and_noted() {
        let g = PyramidGeometry::plan(2016, 2016, &PyramidConfig::default()).unwrap();
        let mut uniform = HeatmapOracle {
            spots: vec![],
            background: 1.0,
        };
        let cfg = PruneConfig {
            depth: DepthMode::Fixed(5),
            n_max: 1,
            ..PruneConfig::default()
        };
        let t = run(&g, &mut uniform, LayoutConfig::default(), &cfg).unwrap();
        assert_eq!(t.depth_limit, 2);
        assert_eq!(t.terminal_level, 2);
        assert_eq!(t.notes.len(), 1);
        assert!(PruneConfig { depth: DepthMode::Fixed(1), ..cfg }.validate().is_err());
    }

    #[test]
    fn provider_length_mismatch_is_reported() {
        struct Short;
        impl AttentionProvider for Short {
            fn name(&self) -> &'static str {
                "short"
            }
            fn scores(&mut self, _: &LevelContext<'_>) -> Result<Vec<f64>> {
                Ok(vec![1.0; 3])
            }
        }
        let g = g4000();
        let err = run(&g, &mut Short, LayoutConfig::default(), &PruneConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ScoreLength { level: 1, .. }));
    }
}
