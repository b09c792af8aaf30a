//! Autoregressive sampling of new pieces.
//!
//! Each new step advances the time-axis stack by one step on the features
//! of the previous step, then walks the note-axis stack from the lowest
//! note upward. Note `n` is conditioned on the sampled pair of note `n-1`;
//! play is drawn first and articulation only when the note plays.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, Scalar};
use crate::lstm::LstmState;
use crate::model::{ModelConfig, ModelParams};
use crate::note_state::{NoteState, NoteStateMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationConfig {
    pub n_steps: usize,
    pub seed: u64,
    /// Steps fed through the time axis before sampling starts. Without a
    /// primer a single all-rest step is used.
    pub primer: Option<NoteStateMatrix>,
    pub temperature: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            n_steps: 128,
            seed: 0,
            primer: None,
            temperature: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub matrix: NoteStateMatrix,
    /// Play probability per cell, `[note][step]`.
    pub play_prob: Vec<f64>,
    /// Articulation probability per cell (evaluated even when the note did
    /// not play).
    pub articulate_prob: Vec<f64>,
}

/// Probability of a one after dividing the logit by `temperature`.
pub fn bernoulli_prob(logit: f64, temperature: f64) -> f64 {
    sigmoid(logit / temperature)
}

pub fn generate<F: Scalar>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    gen: &GenerationConfig,
) -> Result<SampleTrace> {
    if gen.n_steps == 0 {
        return Err(Error::InvalidConfig(
            "at least one step must be generated".into(),
        ));
    }
    if gen.temperature.is_nan() || gen.temperature <= 0.0 {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    params.check_config(cfg)?;
    let n = cfg.n_notes;
    let primer = match &gen.primer {
        Some(p) => {
            if !(p.low_note() == cfg.low_note && p.n_notes() == n) {
                return Err(Error::InvalidPrimer(alloc::format!(
                    "primer covers notes {}+{}, model expects {}+{}",
                    p.low_note(),
                    p.n_notes(),
                    cfg.low_note,
                    n
                )));
            }
            if p.n_steps() == 0 {
                return Err(Error::InvalidPrimer("primer has no steps".into()));
            }
            p.clone()
        }
        None => NoteStateMatrix::new(cfg.low_note, n, 1)?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(gen.seed);
    let flen = cfg.kernel.feature_len();
    let ht = params.time.n_out();
    let mut features = alloc::vec![F::zero(); n * flen];
    let mut time_state = LstmState::zeros(&params.time, n);
    let mut time_out = Vec::new();
    let mut advance = |column: &[NoteState], step: usize, state: &mut LstmState<F>| -> Vec<F> {
        cfg.kernel
            .expand_step(column, cfg.low_note, step, &mut features);
        let out = params
            .time
            .forward(&features, 1, n, None, Some(state), false);
        *state = out.state;
        out.output
    };
    for step in 0..primer.n_steps() {
        time_out = advance(&primer.column(step), step, &mut time_state);
    }

    let mut matrix = NoteStateMatrix::new(cfg.low_note, n, 0)?;
    let mut play_cols: Vec<Vec<f64>> = Vec::with_capacity(gen.n_steps);
    let mut art_cols: Vec<Vec<f64>> = Vec::with_capacity(gen.n_steps);
    let mut note_input = alloc::vec![F::zero(); ht + 2];
    for k in 0..gen.n_steps {
        let mut column = alloc::vec![NoteState::Rest; n];
        let mut pp = alloc::vec![0.0; n];
        let mut pa = alloc::vec![0.0; n];
        let mut note_state = LstmState::zeros(&params.note, 1);
        let mut below = NoteState::Rest;
        for note in 0..n {
            note_input[..ht].copy_from_slice(&time_out[note * ht..(note + 1) * ht]);
            note_input[ht] = if below.play() { F::one() } else { F::zero() };
            note_input[ht + 1] = if below.articulate() {
                F::one()
            } else {
                F::zero()
            };
            let out = params
                .note
                .forward(&note_input, 1, 1, None, Some(&note_state), false);
            note_state = out.state;
            let [lp, la] = params.output_logits(&out.output);
            pp[note] = bernoulli_prob(lp.as_f64(), gen.temperature);
            pa[note] = bernoulli_prob(la.as_f64(), gen.temperature);
            let play = rng.gen::<f64>() < pp[note];
            let articulate = play && rng.gen::<f64>() < pa[note];
            column[note] =
                NoteState::from_bits(play, articulate).expect("articulation implies play");
            below = column[note];
        }
        matrix.push_step(&column);
        play_cols.push(pp);
        art_cols.push(pa);
        if k + 1 < gen.n_steps {
            time_out = advance(&column, primer.n_steps() + k, &mut time_state);
        }
    }

    let steps = gen.n_steps;
    let by_row = |cols: &[Vec<f64>]| {
        (0..n)
            .flat_map(|note| (0..steps).map(move |t| (note, t)))
            .map(|(note, t)| cols[t][note])
            .collect()
    };
    Ok(SampleTrace {
        play_prob: by_row(&play_cols),
        articulate_prob: by_row(&art_cols),
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig {
            low_note: 48,
            n_notes: 12,
            time_layers: alloc::vec![5],
            note_layers: alloc::vec![4],
            kernel: KernelConfig {
                window_half_width: 3,
                steps_per_measure: 4,
            },
            keep_prob: 0.75,
        }
    }

    #[test]
    fn pinned_negative_play_logit_gives_silence() {
        let mut p = ModelParams::<f32>::init(&cfg(), &mut ChaCha8Rng::seed_from_u64(1));
        p.out_b = alloc::vec![-1000.0, 1000.0];
        let t = generate(
            &p,
            &cfg(),
            &GenerationConfig {
                n_steps: 8,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(t.matrix.played_count(), 0);
        assert_eq!(t.matrix.n_steps(), 8);
        assert!(t.matrix.to_events(120).is_empty());
    }

    #[test]
    fn unplayed_notes_never_articulate() {
        let mut p = ModelParams::<f32>::init(&cfg(), &mut ChaCha8Rng::seed_from_u64(2));
        p.out_b = alloc::vec![0.0, 1000.0];
        let t = generate(
            &p,
            &cfg(),
            &GenerationConfig {
                n_steps: 16,
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let m = &t.matrix;
        let mut played = 0;
        for n in 0..12 {
            for s in 0..16 {
                let c = m.get(n, s);
                assert!(!c.articulate() || c.play());
                // articulation probability is 1, so every played cell articulates
                assert_eq!(c.play(), c.articulate());
                played += usize::from(c.play());
            }
        }
        assert!(played > 0 && played < 12 * 16);
    }

    #[test]
    fn seeded_generation_repeats() {
        let p = ModelParams::<f32>::init(&cfg(), &mut ChaCha8Rng::seed_from_u64(3));
        let g = GenerationConfig {
            n_steps: 10,
            seed: 99,
            ..Default::default()
        };
        assert_eq!(
            generate(&p, &cfg(), &g).unwrap(),
            generate(&p, &cfg(), &g).unwrap()
        );
    }

    #[test]
    fn primer_range_is_checked() {
        let p = ModelParams::<f32>::zeros(&cfg());
        let bad = GenerationConfig {
            primer: Some(NoteStateMatrix::new(21, 88, 4).unwrap()),
            ..Default::default()
        };
        assert!(matches!(
            generate(&p, &cfg(), &bad),
            Err(Error::InvalidPrimer(_))
        ));
        let ok = GenerationConfig {
            n_steps: 3,
            primer: Some(NoteStateMatrix::new(48, 12, 4).unwrap()),
            ..Default::default()
        };
        assert_eq!(generate(&p, &cfg(), &ok).unwrap().matrix.n_steps(), 3);
    }

    #[test]
    fn vanishing_temperature_thresholds() {
        assert_eq!(bernoulli_prob(0.3, 1e-300), 1.0);
        assert_eq!(bernoulli_prob(-0.3, 1e-300), 0.0);
        assert_eq!(bernoulli_prob(0.0, 1e-300), 0.5);
    }
}
