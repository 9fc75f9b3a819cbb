//! Vision-token layout of one pyramid level.
//!
//! Tokens of the encoded tiles are laid out grid-row by grid-row: for each
//! grid row, the `s x s` tokens of every encoded tile in that row (tile by
//! tile, in-tile row-major), followed by one image-newline token. Newlines
//! are emitted for every grid row, including rows with no encoded tile.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyramid::{PyramidGeometry, PyramidLevel, Rect, TileId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutConfig {
    /// LLM-side tokens per tile edge; 12 gives 144 tokens per tile.
    pub tokens_per_tile_side: usize,
    /// Thumbnail tokens per edge; 24 gives 576 tokens.
    pub thumbnail_side: usize,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            tokens_per_tile_side: 12,
            thumbnail_side: 24,
        }
    }
}

impl LayoutConfig {
    pub fn tokens_per_tile(&self) -> usize {
        self.tokens_per_tile_side * self.tokens_per_tile_side
    }

    pub fn thumbnail_tokens(&self) -> usize {
        self.thumbnail_side * self.thumbnail_side
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens_per_tile_side == 0 || self.thumbnail_side == 0 {
            return Err(Error::invalid("token grid sides must be non-zero"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Tile { tile: TileId, row: usize, col: usize },
    Newline { grid_row: usize },
}

#[derive(Clone, Debug)]
pub struct LevelLayout {
    pub level: usize,
    pub config: LayoutConfig,
    /// Encoded tiles, row-major.
    pub encoded_tiles: Vec<TileId>,
    /// hr tokens in sequence order, newlines included.
    pub tokens: Vec<TokenKind>,
    /// Positions in `tokens` of the scored (non-newline) tokens.
    pub scored: Vec<usize>,
    index: HashMap<(usize, usize, usize, usize), usize>,
}

impl LevelLayout {
    /// Layout for `encoded` tiles of level `p`. Tiles are de-duplicated and
    /// sorted row-major.
    pub fn new(geom: &PyramidGeometry, p: usize, encoded: &[TileId], config: LayoutConfig) -> Result<Self> {
        config.validate()?;
        let level = geom
            .level(p)
            .ok_or_else(|| Error::invalid(format!("pyramid has no level {p}")))?;
        let mut tiles: Vec<TileId> = encoded.to_vec();
        tiles.sort();
        tiles.dedup();
        for t in &tiles {
            if t.level != p || t.row >= level.grid.rows || t.col >= level.grid.cols {
                return Err(Error::UnknownTile {
                    level: t.level,
                    row: t.row,
                    col: t.col,
                });
            }
        }
        let s = config.tokens_per_tile_side;
        let mut tokens = Vec::with_capacity(tiles.len() * s * s + level.grid.rows);
        let mut scored = Vec::with_capacity(tiles.len() * s * s);
        let mut index = HashMap::with_capacity(tiles.len() * s * s);
        let mut next = tiles.iter().peekable();
        for grid_row in 0..level.grid.rows {
            while let Some(&&tile) = next.peek() {
                if tile.row != grid_row {
                    break;
                }
                next.next();
                for row in 0..s {
                    for col in 0..s {
                        index.insert((tile.row, tile.col, row, col), scored.len());
                        scored.push(tokens.len());
                        tokens.push(TokenKind::Tile { tile, row, col });
                    }
                }
            }
            tokens.push(TokenKind::Newline { grid_row });
        }
        Ok(Self {
            level: p,
            config,
            encoded_tiles: tiles,
            tokens,
            scored,
            index,
        })
    }

    /// Layout with every tile of level `p` encoded.
    pub fn full(geom: &PyramidGeometry, p: usize, config: LayoutConfig) -> Result<Self> {
        let level = geom
            .level(p)
            .ok_or_else(|| Error::invalid(format!("pyramid has no level {p}")))?;
        let all: Vec<TileId> = level.tiles().map(|t| t.id).collect();
        Self::new(geom, p, &all, config)
    }

    pub fn n_hr(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_scored(&self) -> usize {
        self.scored.len()
    }

    pub fn n_newlines(&self) -> usize {
        self.tokens.len() - self.scored.len()
    }

    /// Scored token `i` as `(tile, in-tile row, in-tile col)`.
    pub fn scored_token(&self, i: usize) -> (TileId, usize, usize) {
        match self.tokens[self.scored[i]] {
            TokenKind::Tile { tile, row, col } => (tile, row, col),
            TokenKind::Newline { .. } => unreachable!("scored positions never hold newlines"),
        }
    }

    /// Inverse of [`scored_token`](Self::scored_token).
    pub fn scored_index(&self, tile: TileId, row: usize, col: usize) -> Option<usize> {
        if tile.level != self.level {
            return None;
        }
        self.index.get(&(tile.row, tile.col, row, col)).copied()
    }

    /// Index of the token in a full-level layout without newlines
    /// (tile row-major, then in-tile row-major).
    pub fn full_grid_index(&self, level: &PyramidLevel, i: usize) -> usize {
        let (tile, row, col) = self.scored_token(i);
        let s = self.config.tokens_per_tile_side;
        (tile.row * level.grid.cols + tile.col) * s * s + row * s + col
    }

    /// Token cell in resized-level pixel coordinates.
    pub fn cell_level_rect(&self, level: &PyramidLevel, i: usize) -> [f64; 4] {
        let (tile, row, col) = self.scored_token(i);
        let b = level.tile_size() as f64;
        let cell = b / self.config.tokens_per_tile_side as f64;
        let x0 = tile.col as f64 * b + col as f64 * cell;
        let y0 = tile.row as f64 * b + row as f64 * cell;
        [x0, y0, x0 + cell, y0 + cell]
    }

    /// Token cell in original-image coordinates, clamped to the image. Cells
    /// lying entirely in padding have zero area.
    pub fn footprint(&self, geom: &PyramidGeometry, i: usize) -> Rect {
        let level = geom.level(self.level).expect("layout level exists");
        let [x0, y0, x1, y1] = self.cell_level_rect(level, i);
        level.rect_to_origin(x0, y0, x1, y1)
    }

    /// Cell center in original-image coordinates (not clamped).
    pub fn center(&self, geom: &PyramidGeometry, i: usize) -> (f64, f64) {
        let level = geom.level(self.level).expect("layout level exists");
        let [x0, y0, x1, y1] = self.cell_level_rect(level, i);
        level.to_origin((x0 + x1) * 0.5, (y0 + y1) * 0.5)
    }
}

/// Thumbnail token cell `(row, col)` in original-image coordinates.
pub fn thumbnail_cell_origin(geom: &PyramidGeometry, config: &LayoutConfig, row: usize, col: usize) -> Rect {
    let t = geom.config.thumbnail_size as f64;
    let cell = t / config.thumbnail_side as f64;
    let scale = geom.image_width.max(geom.image_height) as f64 / t;
    let w = geom.image_width as f64;
    let h = geom.image_height as f64;
    Rect::new(
        (col as f64 * cell * scale).min(w),
        (row as f64 * cell * scale).min(h),
        ((col + 1) as f64 * cell * scale).min(w),
        ((row + 1) as f64 * cell * scale).min(h),
    )
}
