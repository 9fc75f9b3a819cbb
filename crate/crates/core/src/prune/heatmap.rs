//! Paints per-token scores of a trace into original-image geometry.

use crate::error::Result;
use crate::prune::layout::LevelLayout;
use crate::prune::PruneTrace;
use crate::pyramid::{PyramidGeometry, TileId};
use crate::raster::RasterImage;

pub const MAX_SIDE: usize = 1024;

/// Grayscale heatmap, longer side at most [`MAX_SIDE`]. Each level's scores
/// are scaled to its own maximum; finer levels are painted over coarser ones.
pub fn render(geom: &PyramidGeometry, trace: &PruneTrace) -> Result<RasterImage> {
    let scale = (MAX_SIDE as f64 / geom.image_width.max(geom.image_height) as f64).min(1.0);
    let w = ((geom.image_width as f64 * scale).round() as usize).max(1);
    let h = ((geom.image_height as f64 * scale).round() as usize).max(1);
    let mut canvas = vec![0u8; w * h];
    for it in &trace.iterations {
        let tiles: Vec<TileId> = it
            .encoded_tiles
            .iter()
            .map(|&[row, col]| TileId { level: it.level, row, col })
            .collect();
        let layout = LevelLayout::new(geom, it.level, &tiles, trace.layout)?;
        let top = it.scores.iter().copied().fold(0.0, f64::max);
        for (i, s) in it.scores.iter().enumerate() {
            let v = if top > 0.0 { (s / top * 255.0).round() as u8 } else { 0 };
            let r = layout.footprint(geom, i);
            let xa = (r.x0 * scale).round() as usize;
            let xb = ((r.x1 * scale).round() as usize).min(w);
            let ya = (r.y0 * scale).round() as usize;
            let yb = ((r.y1 * scale).round() as usize).min(h);
            for y in ya..yb {
                canvas[y * w + xa..y * w + xb].fill(v);
            }
        }
    }
    RasterImage::new(w, h, 1, canvas)
}
