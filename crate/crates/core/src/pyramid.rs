//! Dynamic image pyramid: a halving chain of the input image, each entry
//! resized onto a whole grid of `B x B` tiles, ordered coarsest first and
//! preceded by a square thumbnail.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::util::{par_map, round_sig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidConfig {
    /// Tile edge `B` in pixels.
    pub tile_size: usize,
    /// The halving chain stops at the first image whose shorter side is at
    /// or below this length.
    pub min_side: usize,
    pub thumbnail_size: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            tile_size: 336,
            min_side: 1008,
            thumbnail_size: 336,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::invalid("tile_size must be at least 1"));
        }
        if self.min_side < self.tile_size {
            return Err(Error::invalid(format!(
                "min_side {} must be >= tile_size {}",
                self.min_side, self.tile_size
            )));
        }
        if self.thumbnail_size == 0 {
            return Err(Error::invalid("thumbnail_size must be at least 1"));
        }
        Ok(())
    }
}

/// Source dimensions of every chain entry, finest (the original) first.
///
/// Each entry halves the previous one (rounding up); the first entry whose
/// shorter side is `<= min_side` is kept and ends the chain.
pub fn build_downsample_chain(width: usize, height: usize, cfg: &PyramidConfig) -> Vec<(usize, usize)> {
    let mut chain = vec![(width, height)];
    if width.min(height) < cfg.tile_size {
        return chain;
    }
    loop {
        let (w, h) = *chain.last().expect("chain is never empty");
        if w.min(h) <= cfg.min_side || w.min(h) < 2 {
            break;
        }
        chain.push((w.div_ceil(2), h.div_ceil(2)));
    }
    chain
}

/// Tiling of one chain entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
    /// Common resize factor `r_p` applied to both axes.
    pub scale: f64,
    pub resized_width: usize,
    pub resized_height: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
}

/// Grid and resize factor for an `height x width` image and tile edge `tile`.
pub fn tile_grid(height: usize, width: usize, tile: usize) -> TileGrid {
    let rows = height.div_ceil(tile);
    let cols = width.div_ceil(tile);
    let scale = f64::min(
        (rows * tile) as f64 / height as f64,
        (cols * tile) as f64 / width as f64,
    );
    let resized_height = round_half_up(height as f64 * scale).clamp(1, rows * tile);
    let resized_width = round_half_up(width as f64 * scale).clamp(1, cols * tile);
    TileGrid {
        rows,
        cols,
        scale,
        resized_width,
        resized_height,
        pad_right: cols * tile - resized_width,
        pad_bottom: rows * tile - resized_height,
    }
}

/// Grid for an image that fits inside one tile: no upscaling, pad only.
fn single_tile_grid(height: usize, width: usize, tile: usize) -> TileGrid {
    TileGrid {
        rows: 1,
        cols: 1,
        scale: 1.0,
        resized_width: width,
        resized_height: height,
        pad_right: tile - width,
        pad_bottom: tile - height,
    }
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

/// Axis-aligned rectangle `[x0, x1) x [y0, y1)` in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5)
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        Rect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    /// Closed containment; tile ownership on shared edges is resolved by the
    /// caller scanning tiles in row-major order.
    pub fn contains_closed(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileId {
    /// 1-based, 1 = coarsest tile level.
    pub level: usize,
    pub row: usize,
    pub col: usize,
}

impl std::fmt::Display for TileId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}/r{}_c{}", self.level, self.row, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tile {
    pub id: TileId,
    /// Pixel block in the resized, padded level; always `B x B`.
    pub level_bbox: [usize; 4],
    /// The same block in original-image coordinates, clamped to the image.
    pub origin_bbox: Rect,
    pub is_padding_only: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevel {
    pub index: usize,
    pub source_width: usize,
    pub source_height: usize,
    pub grid: TileGrid,
    tile_size: usize,
    image_width: usize,
    image_height: usize,
}

impl PyramidLevel {
    pub fn tile_count(&self) -> usize {
        self.grid.rows * self.grid.cols
    }

    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    /// Multiplier from resized-level pixels to original-image pixels, per axis.
    pub fn level_to_origin(&self) -> (f64, f64) {
        (
            self.image_width as f64 / (self.source_width as f64 * self.grid.scale),
            self.image_height as f64 / (self.source_height as f64 * self.grid.scale),
        )
    }

    pub fn to_origin(&self, x: f64, y: f64) -> (f64, f64) {
        let (sx, sy) = self.level_to_origin();
        (x * sx, y * sy)
    }

    pub fn from_origin(&self, x: f64, y: f64) -> (f64, f64) {
        let (sx, sy) = self.level_to_origin();
        (x / sx, y / sy)
    }

    /// Level-coordinate rectangle mapped to original coordinates and clamped
    /// to the image.
    pub fn rect_to_origin(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Rect {
        let (ax, ay) = self.to_origin(x0, y0);
        let (bx, by) = self.to_origin(x1, y1);
        let w = self.image_width as f64;
        let h = self.image_height as f64;
        Rect::new(ax.clamp(0.0, w), ay.clamp(0.0, h), bx.clamp(0.0, w), by.clamp(0.0, h))
    }

    pub fn tile(&self, row: usize, col: usize) -> Option<Tile> {
        if row >= self.grid.rows || col >= self.grid.cols {
            return None;
        }
        let b = self.tile_size;
        let (x0, y0) = (col * b, row * b);
        Some(Tile {
            id: TileId {
                level: self.index,
                row,
                col,
            },
            level_bbox: [x0, y0, x0 + b, y0 + b],
            origin_bbox: self.rect_to_origin(x0 as f64, y0 as f64, (x0 + b) as f64, (y0 + b) as f64),
            is_padding_only: x0 >= self.grid.resized_width || y0 >= self.grid.resized_height,
        })
    }

    /// Tiles in row-major order.
    pub fn tiles(&self) -> impl Iterator<Item = Tile> + '_ {
        (0..self.grid.rows).flat_map(move |r| (0..self.grid.cols).filter_map(move |c| self.tile(r, c)))
    }

    /// First tile in row-major order whose original-image box contains the
    /// point; points on a shared edge go to the lower-index tile.
    pub fn tile_at_origin(&self, x: f64, y: f64) -> Option<TileId> {
        self.tiles()
            .find(|t| !t.is_padding_only && t.origin_bbox.contains_closed(x, y))
            .map(|t| t.id)
    }
}

/// Geometry of a pyramid: everything except pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidGeometry {
    pub config: PyramidConfig,
    pub image_width: usize,
    pub image_height: usize,
    /// Source dimensions finest first, as produced by the halving chain.
    pub chain: Vec<(usize, usize)>,
    /// Tile levels, coarsest first.
    pub levels: Vec<PyramidLevel>,
    /// True when the image fits inside a single tile and was padded, not scaled.
    pub degenerate: bool,
}

impl PyramidGeometry {
    pub fn plan(width: usize, height: usize, cfg: &PyramidConfig) -> Result<Self> {
        cfg.validate()?;
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be non-zero"));
        }
        let chain = build_downsample_chain(width, height, cfg);
        let degenerate = width <= cfg.tile_size && height <= cfg.tile_size;
        let levels = chain
            .iter()
            .rev()
            .enumerate()
            .map(|(i, &(w, h))| {
                let grid = if degenerate {
                    single_tile_grid(h, w, cfg.tile_size)
                } else {
                    tile_grid(h, w, cfg.tile_size)
                };
                PyramidLevel {
                    index: i + 1,
                    source_width: w,
                    source_height: h,
                    grid,
                    tile_size: cfg.tile_size,
                    image_width: width,
                    image_height: height,
                }
            })
            .collect();
        Ok(Self {
            config: *cfg,
            image_width: width,
            image_height: height,
            chain,
            levels,
            degenerate,
        })
    }

    /// Number of tile levels `P`.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// `P + 1`, counting the thumbnail.
    pub fn total_layers(&self) -> usize {
        self.levels.len() + 1
    }

    /// Level `p`, 1-based from the coarsest.
    pub fn level(&self, p: usize) -> Option<&PyramidLevel> {
        p.checked_sub(1).and_then(|i| self.levels.get(i))
    }

    pub fn tile_counts(&self) -> Vec<usize> {
        self.levels.iter().map(PyramidLevel::tile_count).collect()
    }

    pub fn tile(&self, id: TileId) -> Result<Tile> {
        self.level(id.level)
            .and_then(|l| l.tile(id.row, id.col))
            .ok_or(Error::UnknownTile {
                level: id.level,
                row: id.row,
                col: id.col,
            })
    }

    /// Content size of the thumbnail before it is padded to a square.
    pub fn thumbnail_content(&self) -> (usize, usize) {
        let t = self.config.thumbnail_size as f64;
        let s = t / self.image_width.max(self.image_height) as f64;
        (
            round_half_up(self.image_width as f64 * s).clamp(1, self.config.thumbnail_size),
            round_half_up(self.image_height as f64 * s).clamp(1, self.config.thumbnail_size),
        )
    }

    pub fn to_manifest(&self, image_path: Option<String>, base_gsd: Option<f64>) -> PyramidManifest {
        let p_total = self.num_levels();
        PyramidManifest {
            config: self.config,
            image: ImageInfo {
                width: self.image_width,
                height: self.image_height,
                path: image_path,
            },
            degenerate: self.degenerate,
            total_layers: self.total_layers(),
            thumbnail: {
                let (w, h) = self.thumbnail_content();
                [w, h]
            },
            base_gsd,
            chain: self.chain.iter().map(|&(w, h)| [w, h]).collect(),
            levels: self
                .levels
                .iter()
                .map(|l| LevelManifest {
                    p: l.index,
                    source_w: l.source_width,
                    source_h: l.source_height,
                    r_p: round_sig(l.grid.scale, 9),
                    resized_w: l.grid.resized_width,
                    resized_h: l.grid.resized_height,
                    grid: [l.grid.rows, l.grid.cols],
                    pads: [l.grid.pad_right, l.grid.pad_bottom],
                    gsd: base_gsd.map(|g| round_sig(g * 2f64.powi((p_total - l.index) as i32), 9)),
                    tiles: l
                        .tiles()
                        .map(|t| TileManifest {
                            id: t.id.to_string(),
                            row: t.id.row,
                            col: t.id.col,
                            origin_bbox: t.origin_bbox.to_array().map(|v| round_sig(v, 9)),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds geometry from a manifest, checking the stored layout agrees.
    pub fn from_manifest(m: &PyramidManifest) -> Result<Self> {
        let g = Self::plan(m.image.width, m.image.height, &m.config)?;
        let chain: Vec<[usize; 2]> = g.chain.iter().map(|&(w, h)| [w, h]).collect();
        if chain != m.chain || g.levels.len() != m.levels.len() {
            return Err(Error::format("manifest", "chain does not match its config"));
        }
        for (l, lm) in g.levels.iter().zip(&m.levels) {
            if [l.grid.rows, l.grid.cols] != lm.grid || l.index != lm.p {
                return Err(Error::format(
                    "manifest",
                    format!("level {} grid does not match its config", lm.p),
                ));
            }
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidManifest {
    pub config: PyramidConfig,
    pub image: ImageInfo,
    pub degenerate: bool,
    pub total_layers: usize,
    pub thumbnail: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_gsd: Option<f64>,
    pub chain: Vec<[usize; 2]>,
    pub levels: Vec<LevelManifest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelManifest {
    pub p: usize,
    pub source_w: usize,
    pub source_h: usize,
    pub r_p: f64,
    pub resized_w: usize,
    pub resized_h: usize,
    pub grid: [usize; 2],
    pub pads: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gsd: Option<f64>,
    pub tiles: Vec<TileManifest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileManifest {
    pub id: String,
    pub row: usize,
    pub col: usize,
    pub origin_bbox: [f64; 4],
}

/// A pyramid with pixels: the thumbnail and each level resized and padded
/// onto its full tile grid.
#[derive(Clone, Debug)]
pub struct ImagePyramid {
    pub geometry: PyramidGeometry,
    pub thumbnail: RasterImage,
    levels: Vec<RasterImage>,
}

impl ImagePyramid {
    pub fn build(img: &RasterImage, cfg: &PyramidConfig) -> Result<Self> {
        let geometry = PyramidGeometry::plan(img.width(), img.height(), cfg)?;

        // chain images, finest first; each is a 2x reduction of the previous
        let mut chain_images = vec![img.clone()];
        for &(w, h) in &geometry.chain[1..] {
            let prev = chain_images.last().expect("non-empty");
            chain_images.push(prev.resize_bilinear(w, h)?);
        }
        chain_images.reverse();

        let b = cfg.tile_size;
        let jobs: Vec<(&PyramidLevel, &RasterImage)> =
            geometry.levels.iter().zip(chain_images.iter()).collect();
        let levels = par_map(&jobs, |(level, src)| {
            let g = &level.grid;
            src.resize_bilinear(g.resized_width, g.resized_height)?
                .pad_to(g.cols * b, g.rows * b)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let (tw, th) = geometry.thumbnail_content();
        let thumbnail = img
            .resize_bilinear(tw, th)?
            .pad_to(cfg.thumbnail_size, cfg.thumbnail_size)?;

        Ok(Self {
            geometry,
            thumbnail,
            levels,
        })
    }

    /// Resized and padded raster of level `p`.
    pub fn level_image(&self, p: usize) -> Option<&RasterImage> {
        p.checked_sub(1).and_then(|i| self.levels.get(i))
    }

    pub fn crop_tile(&self, id: TileId) -> Result<RasterImage> {
        let tile = self.geometry.tile(id)?;
        let img = self.level_image(id.level).expect("tile lookup validated the level");
        let b = self.geometry.config.tile_size;
        img.crop_zero_fill(tile.level_bbox[0], tile.level_bbox[1], b, b)
    }

    /// Writes `L{p}/r{row}_c{col}.ppm` for every tile under `dir`.
    pub fn dump_tiles(&self, dir: impl AsRef<Path>) -> Result<usize> {
        let dir = dir.as_ref();
        let mut written = 0;
        for level in &self.geometry.levels {
            let ldir = dir.join(format!("L{}", level.index));
            fs::create_dir_all(&ldir)?;
            for t in level.tiles() {
                let tile = self.crop_tile(t.id)?.to_rgb();
                tile.save_pnm(ldir.join(format!("r{}_c{}.ppm", t.id.row, t.id.col)))?;
                written += 1;
            }
        }
        Ok(written)
    }
}
