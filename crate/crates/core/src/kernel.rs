//! Per-cell feature expansion ("input kernel").
//!
//! Every `(note, step)` cell becomes a vector of five segments:
//!
//! | segment | width | content |
//! |---|---|---|
//! | note number | 1 | `pitch / 127` |
//! | pitch class | 12 | one-hot of `pitch mod 12` |
//! | window | `2·(2w+1)` | `(p, a)` of notes `n-w ..= n+w` at the same step, low to high, zero outside the range |
//! | class totals | 12 | number of played notes per pitch class at the step |
//! | beat | `log2(steps_per_measure)` | bits of `step mod steps_per_measure`, least significant first |
//!
//! Cells never depend on each other's outputs, so the expansion can run in
//! any order.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::note_state::{NoteState, NoteStateBatch, NoteStateMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelConfig {
    pub window_half_width: usize,
    pub steps_per_measure: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            window_half_width: 12,
            steps_per_measure: 16,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_half_width == 0 {
            return Err(Error::InvalidConfig(
                "window half-width must be at least 1".into(),
            ));
        }
        if !self.steps_per_measure.is_power_of_two() || self.steps_per_measure < 4 {
            return Err(Error::InvalidConfig(
                "steps per measure must be a power of two, at least 4".into(),
            ));
        }
        Ok(())
    }

    pub fn beat_bits(&self) -> usize {
        self.steps_per_measure.trailing_zeros() as usize
    }

    pub fn window_len(&self) -> usize {
        2 * (2 * self.window_half_width + 1)
    }

    pub fn feature_len(&self) -> usize {
        1 + 12 + self.window_len() + 12 + self.beat_bits()
    }

    pub fn pitch_class_offset(&self) -> usize {
        1
    }

    pub fn window_offset(&self) -> usize {
        13
    }

    pub fn class_totals_offset(&self) -> usize {
        13 + self.window_len()
    }

    pub fn beat_offset(&self) -> usize {
        25 + self.window_len()
    }

    /// Fill `out` (`column.len() × feature_len`, note-major) with the
    /// features of one step whose absolute index is `step`.
    pub fn expand_step<F: Scalar>(
        &self,
        column: &[NoteState],
        low_note: u8,
        step: usize,
        out: &mut [F],
    ) {
        let n_notes = column.len();
        let flen = self.feature_len();
        assert_eq!(out.len(), n_notes * flen, "feature buffer size");
        let w = self.window_half_width as isize;

        let mut class_totals = [0u32; 12];
        for (n, c) in column.iter().enumerate() {
            if c.play() {
                class_totals[(usize::from(low_note) + n) % 12] += 1;
            }
        }
        let beat = step % self.steps_per_measure;

        for (n, feat) in out.chunks_exact_mut(flen).enumerate() {
            feat.fill(F::zero());
            let pitch = usize::from(low_note) + n;
            feat[0] = F::from_f64(pitch as f64 / 127.0);
            feat[self.pitch_class_offset() + pitch % 12] = F::one();
            let win = &mut feat[self.window_offset()..self.window_offset() + self.window_len()];
            for (slot, rel) in (-w..=w).enumerate() {
                let other = n as isize + rel;
                if other < 0 || other >= n_notes as isize {
                    continue;
                }
                let c = column[other as usize];
                if c.play() {
                    win[2 * slot] = F::one();
                }
                if c.articulate() {
                    win[2 * slot + 1] = F::one();
                }
            }
            let totals = &mut feat[self.class_totals_offset()..self.class_totals_offset() + 12];
            for (dst, &count) in totals.iter_mut().zip(&class_totals) {
                *dst = F::from_f64(f64::from(count));
            }
            let bits = &mut feat[self.beat_offset()..];
            for (k, bit) in bits.iter_mut().enumerate() {
                if (beat >> k) & 1 == 1 {
                    *bit = F::one();
                }
            }
        }
    }

    /// Expand a whole matrix into a `T × N × feature_len` step-major buffer.
    pub fn expand_matrix<F: Scalar>(&self, m: &NoteStateMatrix) -> Vec<F> {
        let (n, t, flen) = (m.n_notes(), m.n_steps(), self.feature_len());
        let mut out = alloc::vec![F::zero(); t * n * flen];
        for (step, chunk) in out.chunks_exact_mut(n * flen).enumerate() {
            self.expand_step(&m.column(step), m.low_note(), step, chunk);
        }
        out
    }

    pub fn expand<F: Scalar>(&self, batch: &NoteStateBatch) -> ExpandedFeatures<F> {
        let data = batch
            .matrices()
            .iter()
            .flat_map(|m| self.expand_matrix::<F>(m))
            .collect();
        ExpandedFeatures {
            batch: batch.len(),
            n_notes: batch.n_notes(),
            n_steps: batch.n_steps(),
            feature_len: self.feature_len(),
            data,
        }
    }
}

/// Features for a batch, logically `B × N × T × feature_len`.
///
/// Stored step-major within each batch element (`[b][t][n][f]`) so that one
/// step of every note is contiguous for the time-axis recurrence.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandedFeatures<F> {
    pub batch: usize,
    pub n_notes: usize,
    pub n_steps: usize,
    pub feature_len: usize,
    data: Vec<F>,
}

impl<F: Scalar> ExpandedFeatures<F> {
    pub fn get(&self, b: usize, n: usize, t: usize) -> &[F] {
        let start = ((b * self.n_steps + t) * self.n_notes + n) * self.feature_len;
        &self.data[start..start + self.feature_len]
    }

    /// Build features cell by cell; `f(b, n, t, out)` fills one vector.
    pub fn from_fn(
        batch: usize,
        n_notes: usize,
        n_steps: usize,
        feature_len: usize,
        mut f: impl FnMut(usize, usize, usize, &mut [F]),
    ) -> Self {
        let mut data = alloc::vec![F::zero(); batch * n_steps * n_notes * feature_len];
        for b in 0..batch {
            for t in 0..n_steps {
                for n in 0..n_notes {
                    let start = ((b * n_steps + t) * n_notes + n) * feature_len;
                    f(b, n, t, &mut data[start..start + feature_len]);
                }
            }
        }
        ExpandedFeatures {
            batch,
            n_notes,
            n_steps,
            feature_len,
            data,
        }
    }

    /// `T × N × feature_len` block for one batch element.
    pub fn element(&self, b: usize) -> &[F] {
        let len = self.n_steps * self.n_notes * self.feature_len;
        &self.data[b * len..(b + 1) * len]
    }
}
