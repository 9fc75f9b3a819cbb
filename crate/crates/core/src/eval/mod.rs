//! Evaluation: localization recall of retained tokens, open-ended answer
//! scoring, and unique object references built from detection labels.

pub mod refgen;
pub mod vqa;

use std::collections::HashMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prune::PruneTrace;
use crate::pyramid::Rect;

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format("jsonl", format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRegion {
    pub image: String,
    /// `[x0, y0, x1, y1]` in original-image pixels.
    pub bbox: [f64; 4],
}

impl GroundTruthRegion {
    pub fn rect(&self) -> Rect {
        let [x0, y0, x1, y1] = self.bbox;
        Rect::new(x0, y0, x1, y1)
    }
}

/// Area of `region` covered by the union of `footprints`.
pub fn covered_area(footprints: &[Rect], region: &Rect) -> f64 {
    let clipped: Vec<Rect> = footprints
        .iter()
        .map(|f| f.intersect(region))
        .filter(|r| !r.is_empty())
        .collect();
    let mut xs: Vec<f64> = clipped.iter().flat_map(|r| [r.x0, r.x1]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut area = 0.0;
    let mut spans = Vec::new();
    for w in xs.windows(2) {
        let (a, b) = (w[0], w[1]);
        spans.clear();
        spans.extend(clipped.iter().filter(|r| r.x0 <= a && r.x1 >= b).map(|r| (r.y0, r.y1)));
        spans.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut covered = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for &(y0, y1) in &spans {
            cur = match cur {
                Some((c0, c1)) if y0 <= c1 => Some((c0, c1.max(y1))),
                Some((c0, c1)) => {
                    covered += c1 - c0;
                    Some((y0, y1))
                }
                None => Some((y0, y1)),
            };
        }
        if let Some((c0, c1)) = cur {
            covered += c1 - c0;
        }
        area += covered * (b - a);
    }
    area
}

/// Whether retained-token footprints cover strictly more than half of
/// `region`. The region must have positive area and lie inside the image.
pub fn localization_hit(footprints: &[Rect], region: &Rect, width: f64, height: f64) -> Result<bool> {
    if !(region.area() > 0.0) || region.x0 < 0.0 || region.y0 < 0.0 || region.x1 > width || region.y1 > height {
        return Err(Error::invalid(format!(
            "region {:?} is empty or outside the {width}x{height} image",
            region.to_array()
        )));
    }
    Ok(covered_area(footprints, region) / region.area() > 0.5)
}

/// Fraction of hits.
pub fn recall(hits: &[bool]) -> f64 {
    if hits.is_empty() {
        return 0.0;
    }
    hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub total: usize,
    pub hits: usize,
    pub recall: f64,
    pub skipped: Vec<String>,
}

/// Recall of retained hr tokens of `traces` (keyed by image id) against
/// `regions`. Thumbnail tokens are not counted as coverage. Regions whose
/// image has no trace, or that fall outside the image, are skipped and
/// listed.
pub fn trace_recall(traces: &HashMap<String, PruneTrace>, regions: &[GroundTruthRegion]) -> RecallReport {
    let mut hits = Vec::new();
    let mut skipped = Vec::new();
    for r in regions {
        let Some(t) = traces.get(&r.image) else {
            skipped.push(format!("{}: no trace", r.image));
            continue;
        };
        let fps: Vec<Rect> = t
            .retained
            .iter()
            .map(|k| Rect::new(k.footprint[0], k.footprint[1], k.footprint[2], k.footprint[3]))
            .collect();
        match localization_hit(&fps, &r.rect(), t.image.width as f64, t.image.height as f64) {
            Ok(h) => hits.push(h),
            Err(e) => skipped.push(format!("{}: {e}", r.image)),
        }
    }
    RecallReport {
        total: hits.len(),
        hits: hits.iter().filter(|&&h| h).count(),
        recall: recall(&hits),
        skipped,
    }
}
