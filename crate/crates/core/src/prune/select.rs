//! Rank-based top-alpha selection.

use std::cmp::Ordering;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    /// Selected positions, ascending.
    pub indices: Vec<usize>,
    /// Every score was zero; the selection fell back to index order.
    pub all_zero: bool,
}

/// Number of elements kept out of `n`: `max(1, round(alpha * n))`.
pub fn top_alpha_count(n: usize, alpha: f64) -> usize {
    ((alpha * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Picks the `top_alpha_count(len, alpha)` highest scores. Ties go to the
/// lower index, so the result depends only on the ranking of the scores.
pub fn top_alpha(scores: &[f64], alpha: f64) -> Result<Selection> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot select from an empty score list"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::invalid(format!(
            "score {i} is {}; scores must be finite and non-negative",
            scores[i]
        )));
    }
    let k = top_alpha_count(scores.len(), alpha);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let by_rank = |a: &usize, b: &usize| -> Ordering {
        scores[*b].total_cmp(&scores[*a]).then_with(|| a.cmp(b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_rank);
        order.truncate(k);
    }
    order.sort_unstable();
    Ok(Selection {
        indices: order,
        all_zero: scores.iter().all(|&s| s == 0.0),
    })
}
