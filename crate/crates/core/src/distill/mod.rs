//! Attention distillation from a teacher stack into a shallow student.
//!
//! For each distilled pair `(k, m_k)` and head `h`, the student's
//! turn-boundary attention rows over vision columns are matched to the
//! teacher's with
//!
//! ```text
//! L_kl  = KL(tea || stu) + lambda_hr * KL(tea_hr || stu_hr)
//! L_mse = mean over hr columns of (tea - stu)^2
//! L     = 1/(K H) * sum_k sum_h (lambda_mse * L_mse + lambda_kl * L_kl)
//! ```
//!
//! KL terms renormalise both rows over their columns first; MSE uses the raw
//! values. Rows of several turns are averaged. Gradients are derived by hand
//! through the whole student stack.

pub mod task;

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toyattn::{gelu_grad, init_student_from_teacher, DecoderStack, LayerCache, LayerWeights, TokenSequence};
use crate::util::par_map;

pub const KL_EPS: f64 = 1e-12;
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Student layer `i` (1-based) is initialised from teacher layer
/// `teacher_indices[i-1]`; `distilled` lists the student layers whose
/// attention is matched to their source teacher layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPairPlan {
    pub teacher_indices: Vec<usize>,
    pub distilled: Vec<usize>,
}

impl LayerPairPlan {
    /// Distils the first and last pairs.
    pub fn first_and_last(teacher_indices: Vec<usize>) -> Self {
        let r = teacher_indices.len();
        let distilled = if r > 1 { vec![1, r] } else { vec![1] };
        Self {
            teacher_indices,
            distilled,
        }
    }

    pub fn student_layers(&self) -> usize {
        self.teacher_indices.len()
    }

    /// `(student layer, teacher layer)`, both 1-based.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.distilled.iter().map(|&k| (k, self.teacher_indices[k - 1])).collect()
    }

    pub fn validate(&self, teacher_layers: usize) -> Result<()> {
        let r = self.teacher_indices.len();
        if r == 0 || r >= teacher_layers {
            return Err(Error::invalid(format!(
                "student must have 1..{teacher_layers} layers, got {r}"
            )));
        }
        if self.teacher_indices.windows(2).any(|w| w[1] <= w[0])
            || self.teacher_indices[0] == 0
            || self.teacher_indices[r - 1] > teacher_layers
        {
            return Err(Error::invalid(format!(
                "teacher indices {:?} must increase within 1..={teacher_layers}",
                self.teacher_indices
            )));
        }
        if self.distilled.is_empty()
            || self.distilled.len() > r
            || self.distilled.windows(2).any(|w| w[1] <= w[0])
            || self.distilled[0] == 0
            || self.distilled[self.distilled.len() - 1] > r
        {
            return Err(Error::invalid(format!(
                "distilled layers {:?} must increase within 1..={r}",
                self.distilled
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_hr: f64,
    pub lambda_mse: f64,
    pub lambda_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_hr: 2.0,
            lambda_mse: 1.0,
            lambda_kl: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_hr, self.lambda_mse, self.lambda_kl];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// KL divergence of the renormalised `q` from the renormalised `p`, with
/// `q` clamped below by [`KL_EPS`], and its gradient with respect to the raw
/// `q`. A row of zero teacher mass contributes nothing.
fn kl_with_grad(p: ArrayView1<f64>, q: ArrayView1<f64>) -> (f64, Array1<f64>) {
    let mut grad = Array1::zeros(q.len());
    let sp: f64 = p.sum();
    let sq: f64 = q.sum();
    if !(sp > 0.0) || !(sq > 0.0) {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    let mut live_mass = 0.0;
    for j in 0..p.len() {
        let pj = p[j] / sp;
        if pj <= 0.0 {
            continue;
        }
        let qj = q[j] / sq;
        if qj >= KL_EPS {
            loss += pj * (pj.ln() - qj.ln());
            live_mass += pj;
            grad[j] -= pj / q[j];
        } else {
            loss += pj * (pj.ln() - KL_EPS.ln());
        }
    }
    grad += live_mass / sq;
    (loss, grad)
}

/// KL part of the loss for one pair and head: mean over turns of
/// `KL(all vision columns) + lambda_hr * KL(hr columns)`.
pub fn kl_loss(teacher: &Array2<f64>, student: &Array2<f64>, hr: Range<usize>, lambda_hr: f64) -> f64 {
    kl_loss_grad(teacher, student, hr, lambda_hr).0
}

fn kl_loss_grad(teacher: &Array2<f64>, student: &Array2<f64>, hr: Range<usize>, lambda_hr: f64) -> (f64, Array2<f64>) {
    let turns = teacher.nrows() as f64;
    let mut grad = Array2::zeros(student.raw_dim());
    let mut loss = 0.0;
    for r in 0..teacher.nrows() {
        let (l, g) = kl_with_grad(teacher.row(r), student.row(r));
        loss += l;
        grad.row_mut(r).scaled_add(1.0 / turns, &g);
        if !hr.is_empty() {
            let (l, g) = kl_with_grad(teacher.slice(s![r, hr.clone()]), student.slice(s![r, hr.clone()]));
            loss += lambda_hr * l;
            grad.slice_mut(s![r, hr.clone()]).scaled_add(lambda_hr / turns, &g);
        }
    }
    (loss / turns, grad)
}

/// Mean over turns of the mean squared difference on hr columns.
pub fn mse_loss(teacher: &Array2<f64>, student: &Array2<f64>, hr: Range<usize>) -> f64 {
    mse_loss_grad(teacher, student, hr).0
}

fn mse_loss_grad(teacher: &Array2<f64>, student: &Array2<f64>, hr: Range<usize>) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(student.raw_dim());
    if hr.is_empty() {
        return (0.0, grad);
    }
    let norm = (teacher.nrows() * hr.len()) as f64;
    let mut loss = 0.0;
    for r in 0..teacher.nrows() {
        for c in hr.clone() {
            let diff = student[[r, c]] - teacher[[r, c]];
            loss += diff * diff;
            grad[[r, c]] = 2.0 * diff / norm;
        }
    }
    (loss / norm, grad)
}

/// `rows[pair][head]` of teacher and student, combined per the weights.
pub fn total_loss(
    teacher: &[Vec<Array2<f64>>],
    student: &[Vec<Array2<f64>>],
    hr: Range<usize>,
    w: &LossWeights,
) -> f64 {
    total_loss_grad(teacher, student, hr, w).0
}

fn total_loss_grad(
    teacher: &[Vec<Array2<f64>>],
    student: &[Vec<Array2<f64>>],
    hr: Range<usize>,
    w: &LossWeights,
) -> (f64, Vec<Vec<Array2<f64>>>) {
    let k = teacher.len();
    let h = teacher.first().map_or(1, Vec::len);
    let norm = 1.0 / (k * h) as f64;
    let mut loss = 0.0;
    let grads = teacher
        .iter()
        .zip(student)
        .map(|(tk, sk)| {
            tk.iter()
                .zip(sk)
                .map(|(t, s)| {
                    let (lm, gm) = mse_loss_grad(t, s, hr.clone());
                    let (lk, gk) = kl_loss_grad(t, s, hr.clone(), w.lambda_hr);
                    loss += w.lambda_mse * lm + w.lambda_kl * lk;
                    (gm * w.lambda_mse + gk * w.lambda_kl) * norm
                })
                .collect()
        })
        .collect();
    (loss * norm, grads)
}

/// One training sequence with the frozen teacher rows `[pair][head]`.
#[derive(Clone, Debug)]
pub struct DistillSample {
    pub seq: TokenSequence,
    pub teacher_rows: Vec<Vec<Array2<f64>>>,
}

pub fn prepare_samples(teacher: &DecoderStack, seqs: &[TokenSequence], plan: &LayerPairPlan) -> Result<Vec<DistillSample>> {
    plan.validate(teacher.layers.len())?;
    par_map(seqs, |seq| {
        let (_, rec) = teacher.forward(seq)?;
        Ok(DistillSample {
            seq: seq.clone(),
            teacher_rows: plan.pairs().iter().map(|&(_, m)| rec.layers[m - 1].clone()).collect(),
        })
    })
    .into_iter()
    .collect()
}

fn check_finite(cache: &[LayerCache], upto: usize) -> Result<()> {
    for (l, c) in cache.iter().take(upto).enumerate() {
        for (h, p) in c.probs.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    stage: "attention",
                    layer: l + 1,
                    head: h,
                });
            }
        }
        if c.out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "layer output",
                layer: l + 1,
                head: 0,
            });
        }
    }
    Ok(())
}

/// Loss of `student` on one sample.
pub fn sample_loss(student: &DecoderStack, sample: &DistillSample, plan: &LayerPairPlan, w: &LossWeights) -> Result<f64> {
    let depth = plan.distilled.iter().copied().max().unwrap_or(0);
    let (_, rec) = student.forward_layers(&sample.seq, depth)?;
    let rows: Vec<Vec<Array2<f64>>> = plan.distilled.iter().map(|&k| rec.layers[k - 1].clone()).collect();
    Ok(total_loss(&sample.teacher_rows, &rows, sample.seq.segments.hr_columns(), w))
}

/// Loss and its gradient with respect to every student parameter.
pub fn loss_and_grad(
    student: &DecoderStack,
    sample: &DistillSample,
    plan: &LayerPairPlan,
    w: &LossWeights,
) -> Result<(f64, Vec<LayerWeights>)> {
    let seq = &sample.seq;
    let cache = student.forward_cached(seq)?;
    let depth = plan.distilled.iter().copied().max().unwrap_or(0);
    check_finite(&cache.layers, depth)?;
    let heads = student.config.heads;
    let rows: Vec<Vec<Array2<f64>>> = plan
        .distilled
        .iter()
        .map(|&k| (0..heads).map(|h| cache.attention_rows(k - 1, h, seq)).collect())
        .collect();
    let (loss, row_grads) = total_loss_grad(&sample.teacher_rows, &rows, seq.segments.hr_columns(), w);

    let n = seq.len();
    let vis = seq.vision_range();
    let mut dprobs: Vec<Option<Vec<Array2<f64>>>> = vec![None; depth];
    for (&k, per_head) in plan.distilled.iter().zip(&row_grads) {
        let full = per_head
            .iter()
            .map(|g| {
                let mut d = Array2::zeros((n, n));
                for (r, &t) in seq.turn_ends.iter().enumerate() {
                    d.slice_mut(s![t, vis.clone()]).assign(&g.row(r));
                }
                d
            })
            .collect();
        dprobs[k - 1] = Some(full);
    }

    let mut grads = student.zeros_like();
    let mut dout = Array2::<f64>::zeros((n, student.config.model_dim));
    for l in (0..depth).rev() {
        let (g, dx) = layer_backward(&student.layers[l], &cache.layers[l], &dout, dprobs[l].as_deref(), heads);
        grads[l] = g;
        dout = dx;
    }
    Ok((loss, grads))
}

/// Backward of the RMS normalisation `out = x * inv * gain`.
fn rms_backward(x: &Array2<f64>, inv: &Array1<f64>, gain: &Array1<f64>, dout: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut dx = Array2::zeros(x.raw_dim());
    let mut dgain = Array1::zeros(gain.len());
    for i in 0..x.nrows() {
        let r = &x.row(i) * inv[i];
        let dr = &dout.row(i) * gain;
        dgain += &(&dout.row(i) * &r);
        let m = dr.dot(&r) / d;
        dx.row_mut(i).assign(&((&dr - &(&r * m)) * inv[i]));
    }
    (dx, dgain)
}

fn layer_backward(
    w: &LayerWeights,
    c: &LayerCache,
    dout: &Array2<f64>,
    dprobs: Option<&[Array2<f64>]>,
    heads: usize,
) -> (LayerWeights, Array2<f64>) {
    let n = c.x.nrows();
    let d = c.x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // feed-forward block
    let dw2 = c.act.t().dot(dout);
    let db2 = dout.sum_axis(Axis(0));
    let dpre = dout.dot(&w.w2.t()) * c.pre.mapv(gelu_grad);
    let dw1 = c.z.t().dot(&dpre);
    let db1 = dpre.sum_axis(Axis(0));
    let dz = dpre.dot(&w.w1.t());
    let (dy_norm, dnorm2) = rms_backward(&c.y, &c.inv_rms2, &w.norm2, &dz);
    let dy = dout + &dy_norm;

    // attention block
    let dwo = c.attn.t().dot(&dy);
    let dattn = dy.dot(&w.wo.t());
    let mut dq = Array2::<f64>::zeros((n, d));
    let mut dk = Array2::<f64>::zeros((n, d));
    let mut dv = Array2::<f64>::zeros((n, d));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = &c.probs[h];
        let dattn_h = dattn.slice(cols);
        let mut dp = dattn_h.dot(&c.v.slice(cols).t());
        if let Some(extra) = dprobs {
            dp += &extra[h];
        }
        dv.slice_mut(cols).assign(&p.t().dot(&dattn_h));
        let mut ds = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let dot: f64 = (0..=i).map(|j| dp[[i, j]] * p[[i, j]]).sum();
            for j in 0..=i {
                ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
            }
        }
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    let dwq = c.u.t().dot(&dq);
    let dwk = c.u.t().dot(&dk);
    let dwv = c.u.t().dot(&dv);
    let du = dq.dot(&w.wq.t()) + dk.dot(&w.wk.t()) + dv.dot(&w.wv.t());
    let (dx_norm, dnorm1) = rms_backward(&c.x, &c.inv_rms1, &w.norm1, &du);
    let dx = dy + dx_norm;
    (
        LayerWeights {
            norm1: dnorm1,
            wq: dwq,
            wk: dwk,
            wv: dwv,
            wo: dwo,
            norm2: dnorm2,
            w1: dw1,
            b1: db1,
            w2: dw2,
            b2: db2,
        },
        dx,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub plan: LayerPairPlan,
    pub weights: LossWeights,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Sequences per step; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub student: DecoderStack,
    /// Batch loss before each step, then the full-data loss after the last.
    pub curve: Vec<f64>,
}

/// Mean loss and gradient over `batch`, reduced in index order.
pub fn batch_loss_and_grad(
    student: &DecoderStack,
    batch: &[&DistillSample],
    plan: &LayerPairPlan,
    w: &LossWeights,
) -> Result<(f64, Vec<LayerWeights>)> {
    let parts = par_map(batch, |s| loss_and_grad(student, s, plan, w));
    let mut total = 0.0;
    let mut grads = student.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    for part in parts {
        let (l, g) = part?;
        total += l * scale;
        for (acc, gl) in grads.iter_mut().zip(&g) {
            acc.add_scaled(gl, scale);
        }
    }
    Ok((total, grads))
}

pub fn dataset_loss(student: &DecoderStack, data: &[DistillSample], plan: &LayerPairPlan, w: &LossWeights) -> Result<f64> {
    let parts = par_map(data, |s| sample_loss(student, s, plan, w));
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / data.len() as f64)
}

/// Plain gradient descent on the student initialised from `teacher`.
pub fn train(teacher: &DecoderStack, data: &[TokenSequence], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    let samples = prepare_samples(teacher, data, &cfg.plan)?;
    let student = init_student_from_teacher(teacher, &cfg.plan.teacher_indices)?;
    train_student(student, &samples, cfg)
}

/// Trains an already initialised student on prepared samples.
pub fn train_student(mut student: DecoderStack, samples: &[DistillSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bs = cfg.batch_size.unwrap_or(samples.len()).min(samples.len());
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        let batch: Vec<&DistillSample> = if bs == samples.len() {
            samples.iter().collect()
        } else {
            let mut idx = sample(&mut rng, samples.len(), bs).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| &samples[i]).collect()
        };
        let (loss, grads) = batch_loss_and_grad(&student, &batch, &cfg.plan, &cfg.weights)?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { step, loss });
        }
        curve.push(loss);
        for (layer, g) in student.layers.iter_mut().zip(&grads) {
            layer.add_scaled(g, -cfg.lr);
        }
    }
    let last = dataset_loss(&student, samples, &cfg.plan, &cfg.weights)?;
    if !last.is_finite() || last > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { step: cfg.steps, loss: last });
    }
    curve.push(last);
    Ok(TrainOutcome { student, curve })
}

/// `step,loss` CSV of a loss curve.
pub fn curve_csv(curve: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in curve.iter().enumerate() {
        out.push_str(&format!("{i},{l:.12e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kl_closed_forms() {
        let t = array![[1.0, 0.0]];
        let s = array![[0.5, 0.5]];
        assert!((kl_loss(&t, &s, 0..0, 2.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((kl_loss(&t, &s, 0..2, 2.0) - 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(kl_loss(&s, &s, 0..2, 2.0), 0.0);
        // renormalisation makes scale irrelevant
        assert!(kl_loss(&array![[0.2, 0.1]], &array![[0.4, 0.2]], 0..2, 1.0).abs() < 1e-15);
    }

    #[test]
    fn kl_never_infinite() {
        let l = kl_loss(&array![[0.5, 0.5]], &array![[1.0, 0.0]], 0..0, 1.0);
        assert!(l.is_finite() && l > 10.0);
    }

    #[test]
    fn mse_single_element() {
        assert!((mse_loss(&array![[0.2]], &array![[0.4]], 0..1) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn plan_validation() {
        assert!(LayerPairPlan::first_and_last(vec![1, 5, 11, 14]).validate(14).is_ok());
        assert!(LayerPairPlan::first_and_last(vec![1, 2, 3]).validate(3).is_err());
        let p = LayerPairPlan::first_and_last(vec![1, 5, 11, 14]);
        assert!(p.validate(16).is_ok());
        assert_eq!(p.pairs(), vec![(1, 1), (4, 14)]);
        assert!(LayerPairPlan::first_and_last(vec![3, 2]).validate(8).is_err());
    }

    #[test]
    fn csv_header() {
        assert!(curve_csv(&[1.0, 0.5]).starts_with("step,loss\n0,"));
    }
}
