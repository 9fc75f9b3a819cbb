//! Unique object references from detection labels.
//!
//! Within each category of an image, an object gets a reference when one of
//! these predicates singles it out:
//!
//! * it is the only instance (`the only ship`);
//! * its area exceeds the runner-up's by more than 20% (`the largest ship`,
//!   and symmetrically `the smallest ship`);
//! * its box center is farthest along an axis by more than 20 px
//!   (`the top-most ship`);
//! * it is the only instance whose center lies in a cell of a 3x3 grid
//!   (`the only ship in the bottom-left corner of the image`).
//!
//! Categories with more than 40 instances are skipped. Objects under 16 px
//! on either side take part in comparisons but never receive a reference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_INSTANCES: usize = 40;
pub const AREA_MARGIN: f64 = 1.2;
pub const OFFSET_PX: f64 = 20.0;
pub const MIN_SIDE_PX: f64 = 16.0;
pub const CROP_EXPAND_BELOW: f64 = 400.0;
pub const CROP_EXPAND_BY: f64 = 400.0;
pub const CROP_MAX_SIDE: f64 = 1400.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledObject {
    pub category: String,
    /// `[x0, y0, x1, y1]` in pixels.
    pub bbox: [f64; 4],
}

impl LabeledObject {
    fn w(&self) -> f64 {
        self.bbox[2] - self.bbox[0]
    }

    fn h(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    fn area(&self) -> f64 {
        self.w() * self.h()
    }

    fn center(&self) -> (f64, f64) {
        ((self.bbox[0] + self.bbox[2]) * 0.5, (self.bbox[1] + self.bbox[3]) * 0.5)
    }

    pub fn is_small(&self) -> bool {
        self.w() < MIN_SIDE_PX || self.h() < MIN_SIDE_PX
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageLabels {
    pub image: String,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<LabeledObject>,
}

impl ImageLabels {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::invalid(format!("{}: image size must be positive", self.image)));
        }
        for o in &self.objects {
            let [x0, y0, x1, y1] = o.bbox;
            if !(x0 >= 0.0 && y0 >= 0.0 && x1 > x0 && y1 > y0 && x1 <= self.width && y1 <= self.height) {
                return Err(Error::invalid(format!("{}: bad box {:?}", self.image, o.bbox)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Only,
    Largest,
    Smallest,
    TopMost,
    BottomMost,
    LeftMost,
    RightMost,
    OnlyInRegion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniqueReference {
    pub image: String,
    pub category: String,
    pub bbox: [f64; 4],
    pub predicate: Predicate,
    pub reference: String,
    /// Crop around the target, clamped to the image.
    pub crop: [f64; 4],
    /// Resize factor that keeps the crop's longer side within limits.
    pub output_scale: f64,
}

pub const REGION_NAMES: [[&str; 3]; 3] = [
    ["top-left corner", "top", "top-right corner"],
    ["left side", "center", "right side"],
    ["bottom-left corner", "bottom", "bottom-right corner"],
];

/// 3x3 grid cell `(row, col)` containing `(x, y)`.
pub fn region_of(x: f64, y: f64, width: f64, height: f64) -> (usize, usize) {
    let cell = |v: f64, size: f64| ((3.0 * v / size).floor().max(0.0) as usize).min(2);
    (cell(y, height), cell(x, width))
}

/// Crop window for a target: boxes whose longer side is under 400 px grow
/// by 200 px on every side; the window is clamped to the image.
pub fn crop_for(bbox: [f64; 4], width: f64, height: f64) -> ([f64; 4], f64) {
    let [x0, y0, x1, y1] = bbox;
    let long = (x1 - x0).max(y1 - y0);
    let pad = if long < CROP_EXPAND_BELOW { CROP_EXPAND_BY * 0.5 } else { 0.0 };
    let crop = [
        (x0 - pad).max(0.0),
        (y0 - pad).max(0.0),
        (x1 + pad).min(width),
        (y1 + pad).min(height),
    ];
    let crop_long = (crop[2] - crop[0]).max(crop[3] - crop[1]);
    (crop, (CROP_MAX_SIDE / crop_long).min(1.0))
}

/// Index of the strict maximum of `key` if it beats the runner-up by the
/// given test.
fn standout(objs: &[&LabeledObject], key: impl Fn(&LabeledObject) -> f64, beats: impl Fn(f64, f64) -> bool) -> Option<usize> {
    if objs.len() < 2 {
        return None;
    }
    let mut best = 0;
    for i in 1..objs.len() {
        if key(objs[i]) > key(objs[best]) {
            best = i;
        }
    }
    let second = (0..objs.len())
        .filter(|&i| i != best)
        .map(|i| key(objs[i]))
        .fold(f64::NEG_INFINITY, f64::max);
    beats(key(objs[best]), second).then_some(best)
}

pub fn extract_unique_references(labels: &ImageLabels) -> Result<Vec<UniqueReference>> {
    labels.validate()?;
    let mut by_cat: BTreeMap<&str, Vec<&LabeledObject>> = BTreeMap::new();
    for o in &labels.objects {
        by_cat.entry(o.category.as_str()).or_default().push(o);
    }
    let mut out = Vec::new();
    for (cat, objs) in by_cat {
        if objs.len() > MAX_INSTANCES {
            continue;
        }
        let mut found: Vec<(usize, Predicate, String)> = Vec::new();
        if objs.len() == 1 {
            found.push((0, Predicate::Only, format!("the only {cat}")));
        }
        let margin = |a: f64, b: f64| a > AREA_MARGIN * b;
        if let Some(i) = standout(&objs, |o| o.area(), margin) {
            found.push((i, Predicate::Largest, format!("the largest {cat}")));
        }
        // smallest: the runner-up's area must exceed the target's by the margin
        if let Some(i) = standout(&objs, |o| -o.area(), |a, b| margin(-b, -a)) {
            found.push((i, Predicate::Smallest, format!("the smallest {cat}")));
        }
        let offset = |a: f64, b: f64| a - b > OFFSET_PX;
        let axes: [(Predicate, &str, fn(&LabeledObject) -> f64); 4] = [
            (Predicate::TopMost, "top-most", |o| -o.center().1),
            (Predicate::BottomMost, "bottom-most", |o| o.center().1),
            (Predicate::LeftMost, "left-most", |o| -o.center().0),
            (Predicate::RightMost, "right-most", |o| o.center().0),
        ];
        for (pred, word, key) in axes {
            if let Some(i) = standout(&objs, key, offset) {
                found.push((i, pred, format!("the {word} {cat}")));
            }
        }
        if objs.len() > 1 {
            let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
            for (i, o) in objs.iter().enumerate() {
                let (cx, cy) = o.center();
                cells.entry(region_of(cx, cy, labels.width, labels.height)).or_default().push(i);
            }
            for ((r, c), members) in cells {
                if let [i] = members[..] {
                    found.push((
                        i,
                        Predicate::OnlyInRegion,
                        format!("the only {cat} in the {} of the image", REGION_NAMES[r][c]),
                    ));
                }
            }
        }
        for (i, predicate, reference) in found {
            let o = objs[i];
            if o.is_small() {
                continue;
            }
            let (crop, output_scale) = crop_for(o.bbox, labels.width, labels.height);
            out.push(UniqueReference {
                image: labels.image.clone(),
                category: cat.to_string(),
                bbox: o.bbox,
                predicate,
                reference,
                crop,
                output_scale,
            });
        }
    }
    out.sort_by(|a, b| a.reference.cmp(&b.reference));
    Ok(out)
}
