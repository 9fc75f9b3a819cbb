//! Vision-token counts and transformer FLOPs.
//!
//! One decoder layer over `n` tokens costs `4nd^2 + 2n^2d + c*n*d*m`, with
//! `c = 3` for a gated feed-forward block. A pruning run costs the focus
//! module's layers at every traversed level plus all language-model layers
//! over the retained tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prune::PruneTrace;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub model_dim: u64,
    pub ff_dim: u64,
    pub llm_layers: u64,
    pub rfm_layers: u64,
    /// Tokens per tile produced by the vision encoder.
    pub encoder_tokens_per_tile: u64,
    /// Tokens per tile after downsampling, as seen by the language model.
    pub llm_tokens_per_tile: u64,
    pub thumbnail_tokens: u64,
    /// Number of `n*d*m` products in the feed-forward block.
    pub ff_coeff: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            model_dim: 3584,
            ff_dim: 18944,
            llm_layers: 28,
            rfm_layers: 4,
            encoder_tokens_per_tile: 576,
            llm_tokens_per_tile: 144,
            thumbnail_tokens: 576,
            ff_coeff: 3,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.model_dim,
            self.ff_dim,
            self.llm_layers,
            self.rfm_layers,
            self.encoder_tokens_per_tile,
            self.llm_tokens_per_tile,
            self.thumbnail_tokens,
            self.ff_coeff,
        ];
        if all.contains(&0) {
            return Err(Error::invalid("cost parameters must all be >= 1"));
        }
        Ok(())
    }
}

/// FLOPs of one decoder layer over `n` tokens.
pub fn layer_flops(n: u64, p: &CostParams) -> f64 {
    let (n, d, m) = (n as f64, p.model_dim as f64, p.ff_dim as f64);
    4.0 * n * d * d + 2.0 * n * n * d + p.ff_coeff as f64 * n * d * m
}

/// Sum of `layers * layer_flops(n)` over `(layers, n)` segments.
pub fn schedule_flops(schedule: &[(u64, u64)], p: &CostParams) -> f64 {
    schedule.iter().map(|&(l, n)| l as f64 * layer_flops(n, p)).sum()
}

/// `(encoder, llm)` tokens of the grid-cropping baseline with `tiles` tiles.
pub fn anyres_tokens(tiles: u64, p: &CostParams) -> (u64, u64) {
    (
        (tiles + 1) * p.encoder_tokens_per_tile,
        tiles * p.llm_tokens_per_tile + p.thumbnail_tokens,
    )
}

/// `(encoder, llm)` tokens of a pyramid run: every tile of `coarser` levels
/// plus `selected` tiles at the last level are encoded, and the top `alpha`
/// of the last level's tokens reach the language model.
pub fn dip_tokens(coarser: &[u64], selected: u64, alpha: f64, p: &CostParams) -> (u64, u64) {
    let encoded: u64 = 1 + coarser.iter().sum::<u64>() + selected;
    let kept = (alpha * (selected * p.llm_tokens_per_tile) as f64).round() as u64;
    (encoded * p.encoder_tokens_per_tile, kept + p.thumbnail_tokens)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub stage: String,
    pub layers: u64,
    pub tokens: u64,
    pub flops: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: CostParams,
    pub encoder_tokens: u64,
    pub llm_tokens: u64,
    pub stages: Vec<StageCost>,
    pub total_flops: f64,
    pub total_tflops: f64,
}

impl CostReport {
    fn from_stages(params: CostParams, encoder_tokens: u64, llm_tokens: u64, stages: Vec<StageCost>) -> Self {
        let total_flops = stages.iter().map(|s| s.flops).sum();
        Self {
            params,
            encoder_tokens,
            llm_tokens,
            stages,
            total_flops,
            total_tflops: tflops(total_flops),
        }
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// FLOPs in units of 1e12, rounded to two decimals.
pub fn tflops(flops: f64) -> f64 {
    (flops / 1e10).round() / 100.0
}

fn stage(name: impl Into<String>, layers: u64, tokens: u64, p: &CostParams) -> StageCost {
    StageCost {
        stage: name.into(),
        layers,
        tokens,
        flops: layers as f64 * layer_flops(tokens, p),
    }
}

/// Cost of a pruning run. The focus module sees the thumbnail plus every
/// encoded tile of each traversed level; the language model sees the
/// thumbnail plus the retained tokens. Newline delimiters are not counted.
pub fn pipeline_report(trace: &PruneTrace, p: &CostParams) -> Result<CostReport> {
    p.validate()?;
    let mut stages = Vec::with_capacity(trace.iterations.len() + 1);
    let mut encoded_tiles = 0u64;
    for it in &trace.iterations {
        let tiles = it.encoded_tiles.len() as u64;
        encoded_tiles += tiles;
        stages.push(stage(
            format!("rfm_level{}", it.level),
            p.rfm_layers,
            tiles * p.llm_tokens_per_tile + p.thumbnail_tokens,
            p,
        ));
    }
    let llm = trace.retained.len() as u64 + p.thumbnail_tokens;
    stages.push(stage("llm", p.llm_layers, llm, p));
    Ok(CostReport::from_stages(
        *p,
        (1 + encoded_tiles) * p.encoder_tokens_per_tile,
        llm,
        stages,
    ))
}

/// Cost of a fixed pyramid scenario given the encoded tile count per level.
pub fn scenario_report(level_tiles: &[u64], alpha: f64, p: &CostParams) -> Result<CostReport> {
    p.validate()?;
    let Some((&last, coarser)) = level_tiles.split_last() else {
        return Ok(CostReport::from_stages(
            *p,
            p.encoder_tokens_per_tile,
            p.thumbnail_tokens,
            vec![stage("llm", p.llm_layers, p.thumbnail_tokens, p)],
        ));
    };
    let (enc, llm) = dip_tokens(coarser, last, alpha, p);
    let mut stages: Vec<StageCost> = level_tiles
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            stage(
                format!("rfm_level{}", i + 1),
                p.rfm_layers,
                t * p.llm_tokens_per_tile + p.thumbnail_tokens,
                p,
            )
        })
        .collect();
    stages.push(stage("llm", p.llm_layers, llm, p));
    Ok(CostReport::from_stages(*p, enc, llm, stages))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub setting: String,
    pub encoder_tokens: u64,
    pub llm_tokens: u64,
    pub tflops: f64,
}

/// Reduction schedules applied to the grid-cropping baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// All layers see every token.
    Full,
    /// A fixed token count reaches every layer.
    FixedTokens { tokens: u64 },
    /// The first `full_layers` see every token; the rest keep `keep` of the
    /// vision tokens.
    FastV { full_layers: u64, keep: f64 },
    /// Token count multiplied by `ratio` after each listed layer.
    PyramidDrop { boundaries: Vec<u64>, ratio: f64 },
    /// Focus-module layers over every token, then the language model over
    /// `tokens`.
    FocusThenFixed { tokens: u64 },
}

/// FLOPs of `schedule` applied to `tiles` grid tiles.
pub fn baseline_flops(tiles: u64, schedule: &Schedule, p: &CostParams) -> f64 {
    let (_, n) = anyres_tokens(tiles, p);
    let layers = p.llm_layers;
    let plan: Vec<(u64, u64)> = match schedule {
        Schedule::Full => vec![(layers, n)],
        Schedule::FixedTokens { tokens } => vec![(layers, *tokens)],
        Schedule::FastV { full_layers, keep } => {
            let k = *full_layers.min(&layers);
            vec![(k, n), (layers - k, (n as f64 * keep).round() as u64)]
        }
        Schedule::PyramidDrop { boundaries, ratio } => {
            let mut plan = Vec::new();
            let mut start = 0;
            let mut tokens = n as f64;
            for &b in boundaries.iter().filter(|&&b| b < layers) {
                plan.push((b - start, tokens.round() as u64));
                start = b;
                tokens *= ratio;
            }
            plan.push((layers - start, tokens.round() as u64));
            plan
        }
        Schedule::FocusThenFixed { tokens } => vec![(p.rfm_layers, n), (layers, *tokens)],
    };
    schedule_flops(&plan, p)
}

/// The efficiency comparison for a 4000x4000 input: grid cropping with 144
/// tiles under several token-reduction schedules, and the pyramid run with
/// 9/36/50 encoded tiles.
pub fn comparison_table(p: &CostParams) -> Result<Vec<ComparisonRow>> {
    p.validate()?;
    let tiles = 144;
    let (enc, llm) = anyres_tokens(tiles, p);
    let row = |setting: &str, llm_tokens: u64, schedule: Schedule| ComparisonRow {
        setting: setting.to_string(),
        encoder_tokens: enc,
        llm_tokens,
        tflops: tflops(baseline_flops(tiles, &schedule, p)),
    };
    let pruned = (0.25 * (tiles * p.llm_tokens_per_tile) as f64).round() as u64 + p.thumbnail_tokens;
    let mut rows = vec![
        row("anyres-p144", llm, Schedule::Full),
        row("prumerge++", 5328, Schedule::FixedTokens { tokens: 5328 }),
        row("visionzip", 9280, Schedule::FixedTokens { tokens: 9280 }),
        row("fastv", llm, Schedule::FastV { full_layers: 2, keep: 0.5 }),
        row(
            "pdrop",
            llm,
            Schedule::PyramidDrop {
                boundaries: vec![7, 14, 21],
                ratio: 0.5,
            },
        ),
        row("anyres-p144 + prune", pruned, Schedule::FocusThenFixed { tokens: pruned }),
    ];
    let dip = scenario_report(&[9, 36, 50], 0.25, p)?;
    rows.push(ComparisonRow {
        setting: "dip-4layer + prune".into(),
        encoder_tokens: dip.encoder_tokens,
        llm_tokens: dip.llm_tokens,
        tflops: dip.total_tflops,
    });
    Ok(rows)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("setting,vis_tokens_total,vis_tokens_to_llm,tflops\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.2}\n", r.setting, r.encoder_tokens, r.llm_tokens, r.tflops));
    }
    out
}
