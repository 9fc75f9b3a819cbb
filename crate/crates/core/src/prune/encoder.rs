//! Deterministic desk-scale stand-in for the vision encoder and projector.
//!
//! Each token embedding is a fixed seeded projection of simple statistics of
//! its pixel cell (mean and spread of luminance) plus a projected sinusoidal
//! encoding of the cell center in original-image coordinates and a segment
//! vector. Text and system tokens are fixed seeded vectors.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prune::layout::{thumbnail_cell_origin, LayoutConfig, LevelLayout, TokenKind};
use crate::pyramid::ImagePyramid;
use crate::raster::RasterImage;
use crate::toyattn::{Segments, TokenSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub seed: u64,
    pub sys_tokens: usize,
    pub text_tokens: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            seed: 7,
            sys_tokens: 2,
            text_tokens: 3,
        }
    }
}

const FEATURES: usize = 3;
const POS_FEATURES: usize = 8;
const FEATURE_GAIN: f64 = 2.0;
const POS_GAIN: f64 = 0.3;

#[derive(Clone, Debug)]
pub struct TileEncoder {
    pub config: EncoderConfig,
    feat: Array2<f64>,
    pos: Array2<f64>,
    seg_lr: Array1<f64>,
    seg_hr: Array1<f64>,
    newline: Array1<f64>,
    sys: Array2<f64>,
    text: Array2<f64>,
}

impl TileEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if config.dim == 0 || config.text_tokens == 0 {
            return Err(Error::invalid("encoder needs a non-zero width and text tokens"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dim;
        let a = (3.0 / d as f64).sqrt();
        let mut mat = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rng.random_range(-a..a));
        let feat = mat(d, FEATURES);
        let pos = mat(d, POS_FEATURES);
        let seg = mat(3, d);
        let sys = mat(config.sys_tokens, d);
        let text = mat(config.text_tokens, d);
        Ok(Self {
            config,
            feat,
            pos,
            seg_lr: seg.row(0).to_owned(),
            seg_hr: seg.row(1).to_owned(),
            newline: seg.row(2).to_owned(),
            sys,
            text,
        })
    }

    /// Embedding of a vision cell with luminance mean/std at normalised
    /// center `(u, v)`.
    pub fn embed_cell(&self, mean: f64, std: f64, u: f64, v: f64, hr: bool) -> Array1<f64> {
        let c = mean - 0.5;
        let f = [c, std, c * c];
        let pi = std::f64::consts::PI;
        let p = [
            (pi * u).sin(),
            (pi * u).cos(),
            (pi * v).sin(),
            (pi * v).cos(),
            (2.0 * pi * u).sin(),
            (2.0 * pi * u).cos(),
            (2.0 * pi * v).sin(),
            (2.0 * pi * v).cos(),
        ];
        let mut e = if hr { self.seg_hr.clone() } else { self.seg_lr.clone() };
        for (k, fk) in f.iter().enumerate() {
            e.scaled_add(FEATURE_GAIN * fk, &self.feat.column(k));
        }
        for (k, pk) in p.iter().enumerate() {
            e.scaled_add(POS_GAIN * pk, &self.pos.column(k));
        }
        e
    }

    /// Direction along which cell brightness moves the embedding.
    pub fn brightness_direction(&self) -> Array1<f64> {
        self.feat.column(0).to_owned()
    }

    pub fn hr_embeddings(&self, pyr: &ImagePyramid, layout: &LevelLayout) -> Result<Array2<f64>> {
        let geom = &pyr.geometry;
        let level = geom
            .level(layout.level)
            .ok_or_else(|| Error::invalid(format!("pyramid has no level {}", layout.level)))?;
        let img = pyr.level_image(layout.level).expect("level exists");
        let mut out = Array2::<f64>::zeros((layout.n_hr(), self.config.dim));
        let mut scored = 0;
        for (t, kind) in layout.tokens.iter().enumerate() {
            let e = match kind {
                TokenKind::Newline { .. } => self.newline.clone(),
                TokenKind::Tile { .. } => {
                    let [x0, y0, x1, y1] = layout.cell_level_rect(level, scored);
                    let (mean, std) = cell_stats(img, x0, y0, x1, y1);
                    let (cx, cy) = layout.center(geom, scored);
                    scored += 1;
                    self.embed_cell(
                        mean,
                        std,
                        cx / geom.image_width as f64,
                        cy / geom.image_height as f64,
                        true,
                    )
                }
            };
            out.row_mut(t).assign(&e);
        }
        Ok(out)
    }

    pub fn thumbnail_embeddings(&self, pyr: &ImagePyramid, layout: &LayoutConfig) -> Array2<f64> {
        let geom = &pyr.geometry;
        let side = layout.thumbnail_side;
        let cell = geom.config.thumbnail_size as f64 / side as f64;
        let mut out = Array2::<f64>::zeros((side * side, self.config.dim));
        for r in 0..side {
            for c in 0..side {
                let (mean, std) = cell_stats(
                    &pyr.thumbnail,
                    c as f64 * cell,
                    r as f64 * cell,
                    (c + 1) as f64 * cell,
                    (r + 1) as f64 * cell,
                );
                let (cx, cy) = thumbnail_cell_origin(geom, layout, r, c).center();
                let e = self.embed_cell(
                    mean,
                    std,
                    cx / geom.image_width as f64,
                    cy / geom.image_height as f64,
                    false,
                );
                out.row_mut(r * side + c).assign(&e);
            }
        }
        out
    }

    /// `[system, thumbnail, hr tokens of the layout, text]`, one turn.
    pub fn sequence(&self, pyr: &ImagePyramid, layout: &LevelLayout) -> Result<TokenSequence> {
        let lr = self.thumbnail_embeddings(pyr, &layout.config);
        let hr = self.hr_embeddings(pyr, layout)?;
        Ok(self.assemble(lr, hr))
    }

    pub fn assemble(&self, lr: Array2<f64>, hr: Array2<f64>) -> TokenSequence {
        let segments = Segments {
            sys: self.sys.nrows(),
            lr: lr.nrows(),
            hr: hr.nrows(),
            txt: self.text.nrows(),
        };
        let n = segments.total();
        let mut emb = Array2::<f64>::zeros((n, self.config.dim));
        let mut at = 0;
        for block in [&self.sys, &lr, &hr, &self.text] {
            for row in block.rows() {
                emb.row_mut(at).assign(&row);
                at += 1;
            }
        }
        TokenSequence {
            embeddings: emb,
            segments,
            turn_ends: vec![n - 1],
        }
    }
}

/// Luminance mean and standard deviation over the pixel block covering
/// `[x0, x1) x [y0, y1)` (rounded to whole pixels, at least one pixel).
pub fn cell_stats(img: &RasterImage, x0: f64, y0: f64, x1: f64, y1: f64) -> (f64, f64) {
    let xa = (x0.round() as usize).min(img.width() - 1);
    let ya = (y0.round() as usize).min(img.height() - 1);
    let xb = (x1.round() as usize).clamp(xa + 1, img.width());
    let yb = (y1.round() as usize).clamp(ya + 1, img.height());
    let mut sum = 0.0;
    let mut sq = 0.0;
    for y in ya..yb {
        for x in xa..xb {
            let l = img.luma(x, y);
            sum += l;
            sq += l * l;
        }
    }
    let n = ((xb - xa) * (yb - ya)) as f64;
    let mean = sum / n;
    (mean, (sq / n - mean * mean).max(0.0).sqrt())
}
