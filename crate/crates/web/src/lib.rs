//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes and returns JSON strings so the page needs no
//! generated type glue beyond the functions themselves.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// Tile boxes of every pyramid level for an image of the given size.
#[wasm_bindgen]
pub fn pyramid_layout(width: usize, height: usize, tile_size: usize, min_side: usize) -> Result<String, JsError> {
    let view = demo::layout(width, height, tile_size, min_side).map_err(js)?;
    serde_json::to_string(&view).map_err(|e| js(e.to_string()))
}

/// Result of one oracle-driven pruning run.
#[wasm_bindgen]
pub struct PruneSession {
    inner: demo::PruneRun,
}

#[wasm_bindgen]
impl PruneSession {
    #[wasm_bindgen(constructor)]
    pub fn new(request: &str) -> Result<PruneSession, JsError> {
        let req: demo::PruneRequest = serde_json::from_str(request).map_err(|e| js(e.to_string()))?;
        Ok(Self {
            inner: demo::prune(&req).map_err(js)?,
        })
    }

    pub fn summary(&self) -> String {
        self.inner.summary().to_string()
    }

    /// RGBA heatmap pixels; the size is packed into the first eight bytes
    /// as two little-endian u32s.
    pub fn heatmap(&self) -> Result<Vec<u8>, JsError> {
        let (w, h, px) = self.inner.heatmap_rgba().map_err(js)?;
        let mut out = Vec::with_capacity(8 + px.len());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend(px);
        Ok(out)
    }

    pub fn cost(&self) -> Result<String, JsError> {
        Ok(self.inner.cost().map_err(js)?.to_string())
    }
}
