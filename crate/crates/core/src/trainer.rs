//! Optimization state and one training iteration; held-out evaluation.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{reduce_elements, LossValue, ModelConfig, ModelParams, SampleMasks};
use crate::note_state::{sample_batch, NoteStateBatch, NoteStateMatrix};
use crate::optim::{apply_step, OptimizerConfig, OptimizerState};

/// Every random draw of a run (initialization, batch windows, dropout)
/// comes from this one stream, which checkpoints capture.
pub type TrainerRng = ChaCha8Rng;

/// Serializable position of a [`TrainerRng`] stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &TrainerRng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> TrainerRng {
        let mut rng = TrainerRng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// Count of completed iterations after this step.
    pub iteration: u64,
    pub loss: f64,
    pub per_step_ll: f64,
}

/// A batch drawn for one iteration together with its dropout masks.
pub struct PreparedBatch {
    pub batch: NoteStateBatch,
    pub masks: Vec<SampleMasks<f32>>,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model_cfg: ModelConfig,
    pub opt_cfg: OptimizerConfig,
    pub params: ModelParams<f32>,
    pub opt_state: OptimizerState<f32>,
    pub iteration: u64,
    pub rng: TrainerRng,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, opt_cfg: OptimizerConfig, seed: u64) -> Result<Self> {
        model_cfg.validate()?;
        opt_cfg.validate()?;
        let mut rng = TrainerRng::seed_from_u64(seed);
        let params = ModelParams::init(&model_cfg, &mut rng);
        let opt_state = OptimizerState::new(&params);
        Ok(Trainer {
            model_cfg,
            opt_cfg,
            params,
            opt_state,
            iteration: 0,
            rng,
        })
    }

    pub fn check_corpus(&self, corpus: &[NoteStateMatrix]) -> Result<()> {
        corpus
            .iter()
            .try_for_each(|m| self.model_cfg.check_matrix(m))
    }

    /// Draw the windows and dropout masks of the next iteration.
    pub fn prepare(
        &mut self,
        corpus: &[NoteStateMatrix],
        batch_size: usize,
        seq_len: usize,
    ) -> Result<PreparedBatch> {
        if seq_len < 2 {
            return Err(Error::InvalidConfig(
                "sequence length must be at least 2".into(),
            ));
        }
        self.check_corpus(corpus)?;
        let batch = sample_batch(
            corpus,
            batch_size,
            seq_len,
            self.model_cfg.kernel.steps_per_measure,
            &mut self.rng,
        )?;
        let keep = self.model_cfg.keep_prob;
        let masks = (0..batch.len())
            .map(|_| {
                SampleMasks::sample(&self.params, batch.n_notes(), seq_len, keep, &mut self.rng)
            })
            .collect();
        Ok(PreparedBatch { batch, masks })
    }

    /// Gradient contribution of element `b` of a prepared batch.
    pub fn element_grad(&self, prepared: &PreparedBatch, b: usize) -> (f64, ModelParams<f32>) {
        let batch = &prepared.batch;
        let scale = 1.0 / (batch.len() * batch.n_notes() * (batch.n_steps() - 1)) as f64;
        let mut grads = self.params.zeros_like();
        let ce = self.params.element_loss_grad(
            &self.model_cfg,
            &batch.matrices()[b],
            Some(&prepared.masks[b]),
            scale as f32,
            &mut grads,
        );
        (ce, grads)
    }

    /// Reduce per-element results (in batch order) and take the optimizer
    /// step.
    pub fn finish(
        &mut self,
        prepared: &PreparedBatch,
        parts: Vec<(f64, ModelParams<f32>)>,
    ) -> Result<StepMetrics> {
        let b = &prepared.batch;
        let (value, grads) = reduce_elements(parts, b.len(), b.n_notes(), b.n_steps());
        apply_step(&mut self.params, &grads, &mut self.opt_state, &self.opt_cfg)?;
        self.iteration += 1;
        Ok(StepMetrics {
            iteration: self.iteration,
            loss: value.loss,
            per_step_ll: value.per_step_ll,
        })
    }

    /// One full iteration computed on the calling thread.
    pub fn step(
        &mut self,
        corpus: &[NoteStateMatrix],
        batch_size: usize,
        seq_len: usize,
    ) -> Result<StepMetrics> {
        let prepared = self.prepare(corpus, batch_size, seq_len)?;
        let parts = (0..prepared.batch.len())
            .map(|b| self.element_grad(&prepared, b))
            .collect();
        self.finish(&prepared, parts)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Per-step log-likelihood of every evaluated window.
    pub window_ll: Vec<f64>,
    pub mean: f64,
    pub best: f64,
    pub median: f64,
}

impl EvalReport {
    fn from_windows(window_ll: Vec<f64>) -> Self {
        let mean = window_ll.iter().sum::<f64>() / window_ll.len() as f64;
        let mut sorted = window_ll.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let k = sorted.len();
        let median = if k % 2 == 1 {
            sorted[k / 2]
        } else {
            0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
        };
        EvalReport {
            best: sorted[k - 1],
            mean,
            median,
            window_ll,
        }
    }

    /// Multiply every figure by `n_ref / n_notes`, e.g. to compare against
    /// results reported for a different note range.
    pub fn rescaled(&self, n_ref: usize, n_notes: usize) -> Self {
        let f = n_ref as f64 / n_notes as f64;
        EvalReport {
            window_ll: self.window_ll.iter().map(|v| v * f).collect(),
            mean: self.mean * f,
            best: self.best * f,
            median: self.median * f,
        }
    }
}

/// Windows of `seq_len` steps used for evaluation. Pass `k` starts at
/// measure `k` and tiles the matrix without overlap.
pub fn eval_windows(
    corpus: &[NoteStateMatrix],
    seq_len: usize,
    passes: usize,
    steps_per_measure: usize,
) -> Vec<NoteStateMatrix> {
    let mut out = Vec::new();
    for pass in 0..passes.max(1) {
        for m in corpus {
            let mut start = pass * steps_per_measure;
            while start + seq_len <= m.n_steps() {
                out.push(m.window(start, seq_len));
                start += seq_len;
            }
        }
    }
    out
}

/// Mean per-step log-likelihood with dropout disabled.
pub fn evaluate(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    corpus: &[NoteStateMatrix],
    seq_len: usize,
    passes: usize,
) -> Result<EvalReport> {
    if seq_len < 2 {
        return Err(Error::InvalidConfig(
            "sequence length must be at least 2".into(),
        ));
    }
    corpus.iter().try_for_each(|m| cfg.check_matrix(m))?;
    let windows = eval_windows(corpus, seq_len, passes, cfg.kernel.steps_per_measure);
    if windows.is_empty() {
        return Err(Error::NoEligibleSource { needed: seq_len });
    }
    let lls = windows
        .into_iter()
        .map(|w| {
            let batch = NoteStateBatch::new(alloc::vec![w]).expect("single window");
            let LossValue { per_step_ll, .. } = params.batch_loss(cfg, &batch, None);
            per_step_ll
        })
        .collect();
    Ok(EvalReport::from_windows(lls))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelConfig;
    use crate::note_state::NoteState;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            low_note: 48,
            n_notes: 12,
            time_layers: alloc::vec![6],
            note_layers: alloc::vec![4],
            kernel: KernelConfig {
                window_half_width: 3,
                steps_per_measure: 4,
            },
            keep_prob: 0.75,
        }
    }

    fn corpus() -> Vec<NoteStateMatrix> {
        let mut m = NoteStateMatrix::new(48, 12, 16).unwrap();
        for t in 0..16 {
            m.set(t % 12, t, NoteState::Articulate);
        }
        alloc::vec![m]
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let opt = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut tr = Trainer::new(small_cfg(), opt, 3).unwrap();
        let before = tr.params.clone();
        for _ in 0..3 {
            let m = tr.step(&corpus(), 2, 8).unwrap();
            assert!(m.loss.is_finite());
        }
        assert_eq!(tr.params, before);
        assert_eq!(tr.iteration, 3);
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let run = || {
            let mut tr = Trainer::new(small_cfg(), OptimizerConfig::default(), 11).unwrap();
            (0..4)
                .map(|_| tr.step(&corpus(), 2, 8).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fresh_model_scores_zero_logit_baseline_on_rests() {
        let tr = Trainer::new(small_cfg(), OptimizerConfig::default(), 0).unwrap();
        let rest = alloc::vec![NoteStateMatrix::new(48, 12, 16).unwrap()];
        let r = evaluate(&tr.params, &tr.model_cfg, &rest, 8, 1).unwrap();
        assert_eq!(r.window_ll.len(), 2);
        assert!((r.mean + 12.0 * core::f64::consts::LN_2).abs() < 1e-9);
        assert_eq!(r.rescaled(12, 12), r);
    }

    #[test]
    fn evaluation_requires_a_full_window() {
        let tr = Trainer::new(small_cfg(), OptimizerConfig::default(), 0).unwrap();
        assert_eq!(
            evaluate(&tr.params, &tr.model_cfg, &corpus(), 17, 1),
            Err(Error::NoEligibleSource { needed: 17 })
        );
    }

    #[test]
    fn mismatched_corpus_range_is_rejected() {
        let mut tr = Trainer::new(small_cfg(), OptimizerConfig::default(), 0).unwrap();
        let other = alloc::vec![NoteStateMatrix::new(21, 88, 16).unwrap()];
        assert!(matches!(
            tr.step(&other, 1, 8),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn rng_state_resumes_stream() {
        use rand::RngCore;
        let mut a = TrainerRng::seed_from_u64(5);
        a.next_u64();
        let mut b = RngState::capture(&a).restore();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn median_of_even_count() {
        let r = EvalReport::from_windows(alloc::vec![-3.0, -1.0, -2.0, -4.0]);
        assert_eq!((r.best, r.median, r.mean), (-1.0, -2.5, -2.5));
    }
}
