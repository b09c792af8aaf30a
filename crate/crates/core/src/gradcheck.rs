//! Central finite-difference verification of the analytic gradients.
//!
//! Only forward passes are used to build the numerical side, so the check
//! stays independent of the backward code it verifies.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernel::KernelConfig;
use crate::lstm::{DropoutMask, LstmStack};
use crate::model::{ModelConfig, ModelParams, SampleMasks};
use crate::note_state::{NoteState, NoteStateBatch, NoteStateMatrix};

/// Entries whose magnitude is below this are compared in absolute terms;
/// central differences at `ε = 1e-5` carry roughly `1e-11` of roundoff.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        !self.blocks.is_empty() && self.blocks.iter().all(|b| b.max_rel_error < tolerance)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub n_notes: usize,
    pub n_steps: usize,
    pub batch: usize,
    pub time_layers: Vec<usize>,
    pub note_layers: Vec<usize>,
    pub epsilon: f64,
    pub keep_prob: f64,
    pub seed: u64,
    /// Negative control: perturb one analytic block before comparing.
    pub corrupt_backward: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            n_notes: 6,
            n_steps: 5,
            batch: 2,
            time_layers: alloc::vec![4],
            note_layers: alloc::vec![3],
            epsilon: 1e-5,
            keep_prob: 0.75,
            seed: 7,
            corrupt_backward: false,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

fn compare_block(name: String, analytic: &[f64], numeric: &[f64]) -> BlockReport {
    let max_rel_error = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max);
    BlockReport {
        name,
        max_rel_error,
        entries: analytic.len(),
    }
}

fn random_matrix<R: Rng>(rng: &mut R, low: u8, n: usize, t: usize) -> NoteStateMatrix {
    let mut m = NoteStateMatrix::new(low, n, t).expect("valid range");
    for note in 0..n {
        for step in 0..t {
            let s = match rng.gen_range(0..4) {
                0 | 1 => NoteState::Rest,
                2 => NoteState::Sustain,
                _ => NoteState::Articulate,
            };
            m.set(note, step, s);
        }
    }
    m
}

/// End-to-end check of the bi-axial model loss gradient, dropout active
/// with fixed masks.
pub fn check_model(opts: &GradcheckOptions) -> GradcheckReport {
    let cfg = ModelConfig {
        low_note: 60 - (opts.n_notes / 2) as u8,
        n_notes: opts.n_notes,
        time_layers: opts.time_layers.clone(),
        note_layers: opts.note_layers.clone(),
        kernel: KernelConfig::default(),
        keep_prob: opts.keep_prob,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = ModelParams::<f64>::init(&cfg, &mut rng);
    for (_, block) in params.blocks_mut() {
        for v in block.iter_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    let windows: Vec<NoteStateMatrix> = (0..opts.batch)
        .map(|_| random_matrix(&mut rng, cfg.low_note, cfg.n_notes, opts.n_steps))
        .collect();
    let batch = NoteStateBatch::new(windows).expect("uniform batch");
    let masks: Vec<SampleMasks<f64>> = (0..opts.batch)
        .map(|_| SampleMasks::sample(&params, cfg.n_notes, opts.n_steps, opts.keep_prob, &mut rng))
        .collect();

    let (_, grads) = params.batch_loss_grad(&cfg, &batch, Some(&masks));
    let names: Vec<String> = grads.blocks().into_iter().map(|(n, _)| n).collect();
    let mut analytic: Vec<Vec<f64>> = grads
        .blocks()
        .into_iter()
        .map(|(_, b)| b.to_vec())
        .collect();
    if opts.corrupt_backward {
        for v in analytic[1].iter_mut() {
            *v *= 1.5;
        }
    }

    let eps = opts.epsilon;
    let mut blocks = Vec::with_capacity(names.len());
    for (bi, name) in names.into_iter().enumerate() {
        let len = analytic[bi].len();
        let mut numeric = alloc::vec![0.0; len];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = params.blocks()[bi].1[k];
            params.blocks_mut()[bi].1[k] = orig + eps;
            let up = params.batch_loss(&cfg, &batch, Some(&masks)).loss;
            params.blocks_mut()[bi].1[k] = orig - eps;
            let down = params.batch_loss(&cfg, &batch, Some(&masks)).loss;
            params.blocks_mut()[bi].1[k] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        blocks.push(compare_block(name, &analytic[bi], &numeric));
    }
    GradcheckReport { blocks }
}

/// Check of a bare LSTM stack through BPTT with dropout, using the scalar
/// loss `Σ output ⊙ R` for a fixed random `R`.
pub fn check_lstm_stack(
    n_in: usize,
    sizes: &[usize],
    steps: usize,
    rows: usize,
    opts: &GradcheckOptions,
) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5A5A);
    let mut stack = LstmStack::<f64>::init(n_in, sizes, &mut rng);
    for (_, _, block) in stack.blocks_mut() {
        for v in block.iter_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    let input: Vec<f64> = (0..steps * rows * n_in)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let masks = DropoutMask::sample_stack(&stack, rows, opts.keep_prob, &mut rng);
    let proj: Vec<f64> = (0..steps * rows * stack.n_out())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let objective = |s: &LstmStack<f64>| -> f64 {
        let out = s.forward(&input, steps, rows, Some(&masks), None, false);
        out.output.iter().zip(&proj).map(|(a, b)| a * b).sum()
    };

    let fwd = stack.forward(&input, steps, rows, Some(&masks), None, true);
    let mut grads = stack.zeros_like();
    let d_input = stack.backward(fwd.cache.as_ref().unwrap(), &proj, &mut grads);
    let analytic: Vec<(String, Vec<f64>)> = grads
        .blocks()
        .map(|(k, kind, b)| (alloc::format!("lstm.{k}.{kind}"), b.to_vec()))
        .collect();

    let eps = opts.epsilon;
    let mut blocks = Vec::new();
    for (bi, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = alloc::vec![0.0; a.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let set = |s: &mut LstmStack<f64>, v: f64| {
                if let Some((_, _, b)) = s.blocks_mut().nth(bi) {
                    b[k] = v;
                }
            };
            let orig = stack.blocks().nth(bi).unwrap().2[k];
            set(&mut stack, orig + eps);
            let up = objective(&stack);
            set(&mut stack, orig - eps);
            let down = objective(&stack);
            set(&mut stack, orig);
            *slot = (up - down) / (2.0 * eps);
        }
        blocks.push(compare_block(name.clone(), a, &numeric));
    }

    // input gradient through the same objective
    let mut numeric = alloc::vec![0.0; input.len()];
    let mut x = input.clone();
    for k in 0..input.len() {
        let f = |x: &[f64]| -> f64 {
            let out = stack.forward(x, steps, rows, Some(&masks), None, false);
            out.output.iter().zip(&proj).map(|(a, b)| a * b).sum()
        };
        x[k] = input[k] + eps;
        let up = f(&x);
        x[k] = input[k] - eps;
        let down = f(&x);
        x[k] = input[k];
        numeric[k] = (up - down) / (2.0 * eps);
    }
    blocks.push(compare_block("lstm.input".into(), &d_input, &numeric));
    GradcheckReport { blocks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.0001) - 1e-4 / 1.0001).abs() < 1e-12);
    }

    #[test]
    fn single_cell_four_steps_matches() {
        let r = check_lstm_stack(
            2,
            &[3],
            4,
            1,
            &GradcheckOptions {
                keep_prob: 1.0,
                ..Default::default()
            },
        );
        assert!(r.passed(1e-4), "{r:?}");
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let opts = GradcheckOptions {
            corrupt_backward: true,
            n_notes: 3,
            n_steps: 3,
            batch: 1,
            ..Default::default()
        };
        assert!(!check_model(&opts).passed(1e-4));
    }
}
