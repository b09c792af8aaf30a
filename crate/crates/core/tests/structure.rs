//! Structural properties of the model: kernel equivariance, time-axis
//! note independence, note-axis causality, articulation masking, and the
//! agreement between sampling and the teacher-forced training graph.

use biaxial_core::generate::bernoulli_prob;
use biaxial_core::linalg::sigmoid;
use biaxial_core::{
    generate, loss, loss_grad, DropoutMask, ExpandedFeatures, GenerationConfig, KernelConfig,
    Logits, LstmStack, LstmState, ModelConfig, ModelParams, NoteState, NoteStateBatch,
    NoteStateMatrix, SampleMasks,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: u32 = 128;

fn cfg(n_notes: usize) -> ModelConfig {
    ModelConfig {
        low_note: 48,
        n_notes,
        time_layers: vec![5, 4],
        note_layers: vec![4, 3],
        kernel: KernelConfig {
            window_half_width: 3,
            steps_per_measure: 16,
        },
        keep_prob: 0.8,
    }
}

/// Initialized parameters with every entry perturbed, output layer included.
fn params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::<f64>::init(cfg, &mut rng);
    for (_, b) in p.blocks_mut() {
        for v in b.iter_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    p
}

fn random_matrix(
    rng: &mut ChaCha8Rng,
    low: u8,
    n: usize,
    t: usize,
    density: f64,
) -> NoteStateMatrix {
    let mut m = NoteStateMatrix::new(low, n, t).unwrap();
    for note in 0..n {
        for step in 0..t {
            if rng.gen_bool(density) {
                let s = if rng.gen_bool(0.5) {
                    NoteState::Articulate
                } else {
                    NoteState::Sustain
                };
                m.set(note, step, s);
            }
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn window_segment_is_transposition_equivariant(seed in any::<u64>(), n in 12usize..28, k in 1usize..6, step in 0usize..64) {
        let kernel = KernelConfig { window_half_width: 3, steps_per_measure: 16 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let low = 40u8;
        let base = random_matrix(&mut rng, low, n, 1, 0.4);
        let mut shifted = NoteStateMatrix::new(low, n, 1).unwrap();
        for note in 0..n - k {
            shifted.set(note + k, 0, base.get(note, 0));
        }
        let mut clipped = base.clone();
        for note in n - k..n {
            clipped.set(note, 0, NoteState::Rest);
        }
        let flen = kernel.feature_len();
        let mut a = vec![0.0f64; n * flen];
        let mut b = vec![0.0f64; n * flen];
        kernel.expand_step(&clipped.column(0), low, step, &mut a);
        kernel.expand_step(&shifted.column(0), low, step, &mut b);
        let (w, off, len) = (3, kernel.window_offset(), kernel.window_len());
        for note in k + w..n - w {
            let src = note - k;
            prop_assert!(src >= w && src + w < n);
            prop_assert_eq!(&b[note * flen + off..note * flen + off + len], &a[src * flen + off..src * flen + off + len]);
        }
    }

    #[test]
    fn time_axis_commutes_with_note_permutation(seed in any::<u64>(), n in 2usize..10, t in 1usize..6) {
        let c = cfg(n);
        let p = params(&c, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let flen = c.kernel.feature_len();
        let raw: Vec<f64> = (0..n * t * flen).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let masks = SampleMasks::sample(&p, n, t + 1, c.keep_prob, &mut rng);
        let permute_mask = |m: &DropoutMask<f64>| DropoutMask {
            rows: m.rows,
            width: m.width,
            values: (0..m.rows).flat_map(|r| m.values[perm[r] * m.width..(perm[r] + 1) * m.width].to_vec()).collect(),
        };
        let pmasks = SampleMasks { time: masks.time.iter().map(permute_mask).collect(), note: masks.note.clone() };
        let feats = ExpandedFeatures::from_fn(1, n, t, flen, |_, note, step, out| {
            out.copy_from_slice(&raw[(step * n + note) * flen..(step * n + note + 1) * flen])
        });
        let pfeats = ExpandedFeatures::from_fn(1, n, t, flen, |_, note, step, out| {
            let src = perm[note];
            out.copy_from_slice(&raw[(step * n + src) * flen..(step * n + src + 1) * flen])
        });
        let out = p.time_axis_forward(&feats, Some(std::slice::from_ref(&masks)));
        let pout = p.time_axis_forward(&pfeats, Some(std::slice::from_ref(&pmasks)));
        for step in 0..t {
            for (note, &src) in perm.iter().enumerate() {
                prop_assert_eq!(pout.get(0, note, step), out.get(0, src, step));
            }
        }
    }

    #[test]
    fn note_axis_logits_ignore_labels_at_and_above(seed in any::<u64>(), n in 2usize..10, t in 2usize..6, cut in any::<prop::sample::Index>()) {
        let c = cfg(n);
        let p = params(&c, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let labels = random_matrix(&mut rng, c.low_note, n, t, 0.4);
        let cut = cut.index(n);
        let mut perturbed = labels.clone();
        for note in cut..n {
            for step in 0..t {
                let s = [NoteState::Rest, NoteState::Sustain, NoteState::Articulate][rng.gen_range(0..3)];
                perturbed.set(note, step, s);
            }
        }
        let feats = c.kernel.expand::<f64>(&NoteStateBatch::new(vec![labels.clone()]).unwrap());
        let time_out = p.time_axis_forward(&feats, None);
        let masks = SampleMasks::sample(&p, n, t, c.keep_prob, &mut rng);
        let ms = Some(std::slice::from_ref(&masks));
        let a = p.note_axis_forward_train(&time_out, &NoteStateBatch::new(vec![labels]).unwrap(), ms);
        let b = p.note_axis_forward_train(&time_out, &NoteStateBatch::new(vec![perturbed]).unwrap(), ms);
        for note in 0..=cut {
            for step in 0..t - 1 {
                prop_assert_eq!(a.get(0, note, step), b.get(0, note, step));
            }
        }
    }

    #[test]
    fn masked_articulation_has_no_loss_or_gradient(seed in any::<u64>(), bsz in 1usize..4, n in 1usize..10, t in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch =
            NoteStateBatch::new((0..bsz).map(|_| random_matrix(&mut rng, 30, n, t, 0.5)).collect()).unwrap();
        let base: Vec<f64> = (0..bsz * n * (t - 1) * 2).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let junk: Vec<f64> = (0..base.len()).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let at = |b: usize, note: usize, step: usize| ((b * n + note) * (t - 1) + step) * 2;
        let logits = Logits::from_fn(bsz, n, t - 1, |b, note, step| [base[at(b, note, step)], base[at(b, note, step) + 1]]);
        let masked_changed = Logits::from_fn(bsz, n, t - 1, |b, note, step| {
            let i = at(b, note, step);
            let played = batch.matrices()[b].get(note, step + 1).play();
            [base[i], if played { base[i + 1] } else { junk[i + 1] }]
        });
        let (v1, g1) = loss_grad(&logits, &batch).unwrap();
        let (v2, g2) = loss_grad(&masked_changed, &batch).unwrap();
        prop_assert_eq!(v1, v2);
        prop_assert_eq!(v1, loss(&logits, &batch).unwrap());
        prop_assert_eq!(&g1, &g2);
        for b in 0..bsz {
            for note in 0..n {
                for step in 0..t - 1 {
                    if !batch.matrices()[b].get(note, step + 1).play() {
                        prop_assert_eq!(g1.get(b, note, step)[1], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_logits_give_the_analytic_baseline(seed in any::<u64>(), n in 1usize..90, t in 2usize..10, density in 0.0f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, 20, n, t, density);
        let played: usize = (0..n).map(|note| (1..t).filter(|&s| m.get(note, s).play()).count()).sum();
        let expect = -std::f64::consts::LN_2 * (n * (t - 1) + played) as f64 / (t - 1) as f64;
        let c = ModelConfig { low_note: 20, n_notes: n, ..cfg(n) };
        let p = ModelParams::<f32>::init(&c, &mut rng);
        let v = p.batch_loss(&c, &NoteStateBatch::new(vec![m]).unwrap(), None);
        prop_assert!((v.per_step_ll - expect).abs() < 1e-9 * expect.abs().max(1.0), "{} vs {}", v.per_step_ll, expect);
    }

    #[test]
    fn generated_cells_never_articulate_silently(seed in any::<u64>(), steps in 1usize..12, temperature in 0.2f64..3.0) {
        let c = cfg(7);
        let p = params(&c, seed);
        let trace = generate(&p, &c, &GenerationConfig { n_steps: steps, seed, primer: None, temperature }).unwrap();
        prop_assert_eq!(trace.matrix.n_steps(), steps);
        for note in 0..7 {
            for step in 0..steps {
                let s = trace.matrix.get(note, step);
                prop_assert!(!s.articulate() || s.play());
            }
        }
    }

    #[test]
    fn sampling_probabilities_match_teacher_forced_logits(seed in any::<u64>(), n in 1usize..8, primer_len in 1usize..5, steps in 1usize..6) {
        let c = cfg(n);
        let p = params(&c, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let primer = random_matrix(&mut rng, c.low_note, n, primer_len, 0.4);
        let gen = GenerationConfig { n_steps: steps, seed, primer: Some(primer.clone()), temperature: 1.0 };
        let trace = generate(&p, &c, &gen).unwrap();
        let mut whole = primer;
        for k in 0..steps {
            whole.push_step(&trace.matrix.column(k));
        }
        let fwd = p.forward_element(&c, &whole, None, false);
        let rows = whole.n_steps() - 1;
        for note in 0..n {
            for k in 0..steps {
                let i = (note * rows + primer_len - 1 + k) * 2;
                let j = note * steps + k;
                prop_assert!((sigmoid(fwd.logits[i]) - trace.play_prob[j]).abs() < 1e-12);
                prop_assert!((sigmoid(fwd.logits[i + 1]) - trace.articulate_prob[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stepwise_stack_matches_unrolled(seed in any::<u64>(), steps in 1usize..7, rows in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = LstmStack::<f64>::init(3, &[4, 2], &mut rng);
        let x: Vec<f64> = (0..steps * rows * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let whole = stack.forward(&x, steps, rows, None, None, false);
        let mut state = LstmState::zeros(&stack, rows);
        let mut out = Vec::new();
        for s in 0..steps {
            let o = stack.forward(&x[s * rows * 3..(s + 1) * rows * 3], 1, rows, None, Some(&state), false);
            state = o.state;
            out.extend(o.output);
        }
        prop_assert_eq!(out, whole.output);
        prop_assert_eq!(state, whole.state);
    }

    #[test]
    fn low_temperature_sharpens_to_the_logit_sign(logit in -20.0f64..20.0) {
        prop_assume!(logit.abs() > 1e-3);
        let p = bernoulli_prob(logit, 1e-6);
        prop_assert_eq!(p, if logit > 0.0 { 1.0 } else { 0.0 });
        prop_assert_eq!(bernoulli_prob(logit, 1.0), sigmoid(logit));
        let hot = bernoulli_prob(logit, 1e6);
        prop_assert!((hot - 0.5).abs() < 1e-4);
    }
}

#[test]
fn note_axis_is_not_trivially_constant() {
    let c = cfg(4);
    let p = params(&c, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels = random_matrix(&mut rng, c.low_note, 4, 3, 0.0);
    let mut louder = labels.clone();
    louder.set(1, 1, NoteState::Articulate);
    let feats = c
        .kernel
        .expand::<f64>(&NoteStateBatch::new(vec![labels.clone()]).unwrap());
    let time_out = p.time_axis_forward(&feats, None);
    let a = p.note_axis_forward_train(&time_out, &NoteStateBatch::new(vec![labels]).unwrap(), None);
    let b = p.note_axis_forward_train(&time_out, &NoteStateBatch::new(vec![louder]).unwrap(), None);
    assert_eq!(a.get(0, 1, 0), b.get(0, 1, 0));
    assert_ne!(a.get(0, 2, 0), b.get(0, 2, 0));
}

#[test]
fn near_zero_temperature_ignores_the_seed() {
    let c = cfg(6);
    let p = params(&c, 21);
    let run = |seed| {
        generate(
            &p,
            &c,
            &GenerationConfig {
                n_steps: 8,
                seed,
                primer: None,
                temperature: 1e-9,
            },
        )
        .unwrap()
    };
    assert_eq!(run(1).matrix, run(2).matrix);
}
