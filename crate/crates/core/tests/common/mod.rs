#![allow(dead_code)]

use ndarray::Array2;
use pyrprune::distill::{DistillSample, LayerPairPlan};
use pyrprune::toyattn::{init_student_from_teacher, DecoderStack, Segments, StackConfig, TokenSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stack(layers: usize, heads: usize, d: usize, ff: usize, seed: u64) -> DecoderStack {
    DecoderStack::random(StackConfig {
        layers,
        heads,
        model_dim: d,
        ff_dim: ff,
        max_seq: 256,
        seed,
    })
    .unwrap()
}

/// Random sequence `[sys, lr, hr, txt]` with the given turn ends counted
/// back from the end of the text block.
pub fn sequence(seg: Segments, d: usize, turns: usize, rng: &mut ChaCha8Rng) -> TokenSequence {
    let n = seg.total();
    let turn_ends = (0..turns).map(|t| n - turns + t).collect();
    TokenSequence {
        embeddings: Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0)),
        segments: seg,
        turn_ends,
    }
}

/// Teacher, perturbed student and one prepared sample for gradient checks.
pub fn gradient_case(seed: u64) -> (DecoderStack, DistillSample, LayerPairPlan) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher = stack(5, 4, 16, 24, seed);
    let plan = LayerPairPlan::first_and_last(vec![1, 3, 5]);
    let mut student = init_student_from_teacher(&teacher, &plan.teacher_indices).unwrap();
    for layer in &mut student.layers {
        for t in layer.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.15..0.15);
            }
        }
    }
    let seg = Segments {
        sys: 2,
        lr: 4,
        hr: 10,
        txt: 4,
    };
    let turns = 1 + (seed % 2) as usize;
    let seq = sequence(seg, 16, turns, &mut rng);
    let samples = pyrprune::distill::prepare_samples(&teacher, &[seq], &plan).unwrap();
    (student, samples.into_iter().next().unwrap(), plan)
}

/// Worst relative and absolute gap between analytic and central-difference
/// gradients over every student parameter of `gradient_case(seed)`.
pub fn gradient_gap(seed: u64) -> (f64, f64) {
    use pyrprune::distill::{loss_and_grad, sample_loss, LossWeights};
    let w = LossWeights::default();
    let (student, sample, plan) = gradient_case(seed);
    let (_, grads) = loss_and_grad(&student, &sample, &plan, &w).unwrap();
    let h = 1e-6;
    let (mut worst, mut worst_abs) = (0.0f64, 0.0f64);
    for l in 0..student.layers.len() {
        for t in 0..grads[l].tensors().len() {
            for i in 0..grads[l].tensors()[t].len() {
                let mut plus = student.clone();
                plus.layers[l].tensors_mut()[t][i] += h;
                let mut minus = student.clone();
                minus.layers[l].tensors_mut()[t][i] -= h;
                let fd = (sample_loss(&plus, &sample, &plan, &w).unwrap()
                    - sample_loss(&minus, &sample, &plan, &w).unwrap())
                    / (2.0 * h);
                let a = grads[l].tensors()[t][i];
                worst_abs = worst_abs.max((a - fd).abs());
                // floor keeps parameters with a vanishing gradient from
                // turning rounding noise into a large ratio
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-5));
            }
        }
    }
    (worst, worst_abs)
}
