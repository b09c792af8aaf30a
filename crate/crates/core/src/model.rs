//! The bi-axial model graph and its masked cross-entropy loss.
//!
//! For each batch element the time-axis stack runs along steps with one row
//! per note (weights tied across notes). Its last-layer activations for
//! steps `0..T-1` condition the prediction of step `t+1`: the note-axis
//! stack runs along notes with one row per target step (weights tied across
//! steps), and note `n` additionally sees the `(p, a)` label of note `n-1`
//! at the target step (zeros below note 0). A final affine map turns the
//! last note-axis activations into `(play, articulate)` logits.
//!
//! `loss = Σ CE / (B·N·(T-1))` and `per_step_ll = -Σ CE / (B·(T-1))`, where
//! the articulation term of each cell is multiplied by its play label.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::{ExpandedFeatures, KernelConfig};
use crate::linalg::{gemm_acc, sigmoid, softplus, Op, Scalar};
use crate::lstm::{DropoutMask, LstmStack, StackCache};
use crate::note_state::{NoteStateBatch, NoteStateMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub low_note: u8,
    pub n_notes: usize,
    pub time_layers: Vec<usize>,
    pub note_layers: Vec<usize>,
    pub kernel: KernelConfig,
    pub keep_prob: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            low_note: 21,
            n_notes: 88,
            time_layers: alloc::vec![64, 64],
            note_layers: alloc::vec![32, 16],
            kernel: KernelConfig::default(),
            keep_prob: 0.75,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.n_notes == 0 || usize::from(self.low_note) + self.n_notes > 128 {
            return Err(Error::InvalidConfig(
                "note range outside MIDI pitches".into(),
            ));
        }
        if self.time_layers.is_empty() || self.note_layers.is_empty() {
            return Err(Error::InvalidConfig(
                "both axes need at least one layer".into(),
            ));
        }
        if self
            .time_layers
            .iter()
            .chain(&self.note_layers)
            .any(|&h| h == 0)
        {
            return Err(Error::InvalidConfig(
                "layer sizes must be at least 1".into(),
            ));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::InvalidConfig("keep_prob must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn note_input_width(&self) -> usize {
        self.time_layers.last().copied().unwrap_or(0) + 2
    }

    pub fn check_matrix(&self, m: &NoteStateMatrix) -> Result<()> {
        if m.low_note() != self.low_note || m.n_notes() != self.n_notes {
            return Err(Error::ShapeMismatch(alloc::format!(
                "matrix covers notes {}+{}, model expects {}+{}",
                m.low_note(),
                m.n_notes(),
                self.low_note,
                self.n_notes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub time: LstmStack<F>,
    pub note: LstmStack<F>,
    /// `2 × h_note`, rows play then articulate.
    pub out_w: Vec<F>,
    pub out_b: Vec<F>,
}

impl<F: Scalar> ModelParams<F> {
    /// LSTM weights random, output layer zero so a fresh model predicts
    /// probability one half everywhere.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let time = LstmStack::init(cfg.kernel.feature_len(), &cfg.time_layers, rng);
        let note = LstmStack::init(cfg.note_input_width(), &cfg.note_layers, rng);
        let h = note.n_out();
        ModelParams {
            time,
            note,
            out_w: alloc::vec![F::zero(); 2 * h],
            out_b: alloc::vec![F::zero(); 2],
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let time = LstmStack::zeros(cfg.kernel.feature_len(), &cfg.time_layers);
        let note = LstmStack::zeros(cfg.note_input_width(), &cfg.note_layers);
        let h = note.n_out();
        ModelParams {
            time,
            note,
            out_w: alloc::vec![F::zero(); 2 * h],
            out_b: alloc::vec![F::zero(); 2],
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            time: self.time.zeros_like(),
            note: self.note.zeros_like(),
            out_w: alloc::vec![F::zero(); self.out_w.len()],
            out_b: alloc::vec![F::zero(); 2],
        }
    }

    /// Parameter blocks in checkpoint order.
    pub fn blocks(&self) -> Vec<(String, &[F])> {
        let mut out: Vec<(String, &[F])> = Vec::new();
        for (k, kind, b) in self.time.blocks() {
            out.push((alloc::format!("time.{k}.{kind}"), b));
        }
        for (k, kind, b) in self.note.blocks() {
            out.push((alloc::format!("note.{k}.{kind}"), b));
        }
        out.push(("out.w".into(), &self.out_w));
        out.push(("out.b".into(), &self.out_b));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [F])> {
        let mut out: Vec<(String, &mut [F])> = Vec::new();
        for (k, kind, b) in self.time.blocks_mut() {
            out.push((alloc::format!("time.{k}.{kind}"), b));
        }
        for (k, kind, b) in self.note.blocks_mut() {
            out.push((alloc::format!("note.{k}.{kind}"), b));
        }
        out.push(("out.w".into(), &mut self.out_w));
        out.push(("out.b".into(), &mut self.out_b));
        out
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        let mut out = ModelParams::<G> {
            time: cast_stack(&self.time),
            note: cast_stack(&self.note),
            out_w: self.out_w.iter().map(|v| G::from_f64(v.as_f64())).collect(),
            out_b: self.out_b.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        };
        out.out_b.truncate(2);
        out
    }

    /// `out += other * scale`, block by block.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s * scale;
            }
        }
    }

    /// Check that the parameter shapes match `cfg`.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = ModelParams::<F>::zeros(cfg);
        let ok = self
            .blocks()
            .iter()
            .zip(expect.blocks())
            .all(|((a, x), (b, y))| *a == b && x.len() == y.len())
            && self.blocks().len() == expect.blocks().len();
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "parameter shapes do not match model configuration".into(),
            ))
        }
    }

    /// Play/articulate logits from one last-layer note-axis activation.
    pub fn output_logits(&self, h: &[F]) -> [F; 2] {
        let n = h.len();
        let dot = |row: &[F]| {
            row.iter()
                .zip(h)
                .fold(F::zero(), |acc, (&w, &x)| acc + w * x)
        };
        [
            dot(&self.out_w[..n]) + self.out_b[0],
            dot(&self.out_w[n..]) + self.out_b[1],
        ]
    }
}

fn cast_stack<F: Scalar, G: Scalar>(s: &LstmStack<F>) -> LstmStack<G> {
    let conv = |v: &Vec<F>| {
        v.iter()
            .map(|x| G::from_f64(x.as_f64()))
            .collect::<Vec<G>>()
    };
    LstmStack {
        layers: s
            .layers
            .iter()
            .map(|l| crate::lstm::LstmLayer {
                n_in: l.n_in,
                n_hidden: l.n_hidden,
                w: conv(&l.w),
                u: conv(&l.u),
                b: conv(&l.b),
            })
            .collect(),
    }
}

/// Dropout masks for one batch element: time-axis rows are notes, note-axis
/// rows are target steps, so each mask is constant along its stack's
/// recurrent axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMasks<F> {
    pub time: Vec<DropoutMask<F>>,
    pub note: Vec<DropoutMask<F>>,
}

impl<F: Scalar> SampleMasks<F> {
    pub fn sample<R: Rng + ?Sized>(
        params: &ModelParams<F>,
        n_notes: usize,
        n_steps: usize,
        keep_prob: f64,
        rng: &mut R,
    ) -> Self {
        SampleMasks {
            time: DropoutMask::sample_stack(&params.time, n_notes, keep_prob, rng),
            note: DropoutMask::sample_stack(
                &params.note,
                n_steps.saturating_sub(1),
                keep_prob,
                rng,
            ),
        }
    }
}

/// Last time-axis layer activations, logically `B × N × T × h`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeAxisOutput<F> {
    pub batch: usize,
    pub n_notes: usize,
    pub n_steps: usize,
    pub width: usize,
    /// `[b][t][n][h]`
    data: Vec<F>,
}

impl<F: Scalar> TimeAxisOutput<F> {
    pub fn get(&self, b: usize, n: usize, t: usize) -> &[F] {
        let start = ((b * self.n_steps + t) * self.n_notes + n) * self.width;
        &self.data[start..start + self.width]
    }

    fn element(&self, b: usize) -> &[F] {
        let len = self.n_steps * self.n_notes * self.width;
        &self.data[b * len..(b + 1) * len]
    }
}

/// Pre-sigmoid scores, logically `B × N × (T-1) × 2`; step `t` predicts
/// source step `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits<F> {
    pub batch: usize,
    pub n_notes: usize,
    pub n_steps: usize,
    /// `[b][n][t][2]`
    data: Vec<F>,
}

impl<F: Scalar> Logits<F> {
    pub fn get(&self, b: usize, n: usize, t: usize) -> [F; 2] {
        let i = ((b * self.n_notes + n) * self.n_steps + t) * 2;
        [self.data[i], self.data[i + 1]]
    }

    pub fn element(&self, b: usize) -> &[F] {
        let len = self.n_notes * self.n_steps * 2;
        &self.data[b * len..(b + 1) * len]
    }

    pub fn from_fn(
        batch: usize,
        n_notes: usize,
        n_steps: usize,
        f: impl Fn(usize, usize, usize) -> [F; 2],
    ) -> Self {
        let mut data = Vec::with_capacity(batch * n_notes * n_steps * 2);
        for b in 0..batch {
            for n in 0..n_notes {
                for t in 0..n_steps {
                    data.extend_from_slice(&f(b, n, t));
                }
            }
        }
        Logits {
            batch,
            n_notes,
            n_steps,
            data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub per_step_ll: f64,
}

/// Sum of masked cross-entropy of one element, and its gradient w.r.t. the
/// logits multiplied by `scale`.
fn element_ce<F: Scalar>(
    logits: &[F],
    labels: &NoteStateMatrix,
    scale: F,
    dlogits: Option<&mut [F]>,
) -> f64 {
    let (n_notes, steps) = (labels.n_notes(), labels.n_steps() - 1);
    let mut total = 0.0f64;
    let mut grad = dlogits;
    for n in 0..n_notes {
        for t in 0..steps {
            let i = (n * steps + t) * 2;
            let cell = labels.get(n, t + 1);
            let (yp, ya) = (cell.play(), cell.articulate());
            let (lp, la) = (logits[i], logits[i + 1]);
            // CE(l, y) = softplus(l) - y·l, evaluated in f64 for any F
            let (lp64, la64) = (lp.as_f64(), la.as_f64());
            total += if yp { softplus(-lp64) } else { softplus(lp64) };
            if yp {
                total += if ya { softplus(-la64) } else { softplus(la64) };
            }
            if let Some(g) = grad.as_deref_mut() {
                let tp = if yp { F::one() } else { F::zero() };
                let ta = if ya { F::one() } else { F::zero() };
                g[i] = (sigmoid(lp) - tp) * scale;
                g[i + 1] = if yp {
                    (sigmoid(la) - ta) * scale
                } else {
                    F::zero()
                };
            }
        }
    }
    total
}

/// Masked loss of a batch of logits against its label batch.
pub fn loss<F: Scalar>(logits: &Logits<F>, batch: &NoteStateBatch) -> Result<LossValue> {
    if logits.batch != batch.len()
        || logits.n_notes != batch.n_notes()
        || logits.n_steps + 1 != batch.n_steps()
    {
        return Err(Error::ShapeMismatch(
            "logits do not align with labels shifted by one step".into(),
        ));
    }
    let total: f64 = batch
        .matrices()
        .iter()
        .enumerate()
        .map(|(b, m)| element_ce(logits.element(b), m, F::one(), None))
        .sum();
    Ok(normalize(
        total,
        batch.len(),
        batch.n_notes(),
        batch.n_steps(),
    ))
}

/// Masked loss of a batch of logits and its gradient with respect to every
/// logit.
pub fn loss_grad<F: Scalar>(
    logits: &Logits<F>,
    batch: &NoteStateBatch,
) -> Result<(LossValue, Logits<F>)> {
    if logits.batch != batch.len()
        || logits.n_notes != batch.n_notes()
        || logits.n_steps + 1 != batch.n_steps()
    {
        return Err(Error::ShapeMismatch(
            "logits do not align with labels shifted by one step".into(),
        ));
    }
    let scale = F::from_f64(1.0 / (batch.len() * batch.n_notes() * (batch.n_steps() - 1)) as f64);
    let mut grad = Logits {
        data: alloc::vec![F::zero(); logits.data.len()],
        ..*logits
    };
    let per = logits.n_notes * logits.n_steps * 2;
    let mut total = 0.0;
    for (b, m) in batch.matrices().iter().enumerate() {
        total += element_ce(
            logits.element(b),
            m,
            scale,
            Some(&mut grad.data[b * per..(b + 1) * per]),
        );
    }
    Ok((
        normalize(total, batch.len(), batch.n_notes(), batch.n_steps()),
        grad,
    ))
}

fn normalize(ce_sum: f64, batch: usize, n_notes: usize, n_steps: usize) -> LossValue {
    let cells = (batch * (n_steps - 1)) as f64;
    LossValue {
        loss: ce_sum / (cells * n_notes as f64),
        per_step_ll: -ce_sum / cells,
    }
}

/// Forward caches of one batch element.
pub struct ElementForward<F> {
    time: Option<StackCache<F>>,
    note: Option<StackCache<F>>,
    note_out: Vec<F>,
    pub logits: Vec<F>,
}

impl<F: Scalar> ModelParams<F> {
    /// Time-axis stack over all `T` steps of every element. `masks` holds one
    /// entry per element, `None` disables dropout.
    pub fn time_axis_forward(
        &self,
        features: &ExpandedFeatures<F>,
        masks: Option<&[SampleMasks<F>]>,
    ) -> TimeAxisOutput<F> {
        let (bsz, n, t) = (features.batch, features.n_notes, features.n_steps);
        let mut data = Vec::with_capacity(bsz * t * n * self.time.n_out());
        for b in 0..bsz {
            let m = masks.map(|m| m[b].time.as_slice());
            data.extend(
                self.time
                    .forward(features.element(b), t, n, m, None, false)
                    .output,
            );
        }
        TimeAxisOutput {
            batch: bsz,
            n_notes: n,
            n_steps: t,
            width: self.time.n_out(),
            data,
        }
    }

    /// Teacher-forced note-axis stack: predictions for steps `1..T` from
    /// time-axis activations at `0..T-1`.
    pub fn note_axis_forward_train(
        &self,
        time_out: &TimeAxisOutput<F>,
        labels: &NoteStateBatch,
        masks: Option<&[SampleMasks<F>]>,
    ) -> Logits<F> {
        let (n, t) = (labels.n_notes(), labels.n_steps());
        let mut data = Vec::with_capacity(labels.len() * n * (t - 1) * 2);
        for (b, m) in labels.matrices().iter().enumerate() {
            let tm = time_out.element(b);
            let prefix = &tm[..(t - 1) * n * time_out.width];
            let nm = masks.map(|m| m[b].note.as_slice());
            let (logits, _, _) = self.note_forward(prefix, m, nm, false);
            data.extend(logits);
        }
        Logits {
            batch: labels.len(),
            n_notes: n,
            n_steps: t - 1,
            data,
        }
    }

    fn note_forward(
        &self,
        time_prefix: &[F],
        labels: &NoteStateMatrix,
        masks: Option<&[DropoutMask<F>]>,
        keep_cache: bool,
    ) -> (Vec<F>, Vec<F>, Option<StackCache<F>>) {
        let (n_notes, rows) = (labels.n_notes(), labels.n_steps() - 1);
        let ht = self.time.n_out();
        let width = ht + 2;
        let mut input = alloc::vec![F::zero(); n_notes * rows * width];
        for n in 0..n_notes {
            for t in 0..rows {
                let dst = &mut input[(n * rows + t) * width..(n * rows + t + 1) * width];
                dst[..ht].copy_from_slice(
                    &time_prefix[(t * n_notes + n) * ht..(t * n_notes + n + 1) * ht],
                );
                if n > 0 {
                    let below = labels.get(n - 1, t + 1);
                    dst[ht] = if below.play() { F::one() } else { F::zero() };
                    dst[ht + 1] = if below.articulate() {
                        F::one()
                    } else {
                        F::zero()
                    };
                }
            }
        }
        let out = self
            .note
            .forward(&input, n_notes, rows, masks, None, keep_cache);
        let hn = self.note.n_out();
        let mut logits = alloc::vec![F::zero(); n_notes * rows * 2];
        gemm_acc(
            n_notes * rows,
            hn,
            2,
            &out.output,
            Op::N,
            &self.out_w,
            Op::T,
            &mut logits,
        );
        for pair in logits.chunks_exact_mut(2) {
            pair[0] = pair[0] + self.out_b[0];
            pair[1] = pair[1] + self.out_b[1];
        }
        (logits, out.output, out.cache)
    }

    /// Full forward pass of one element window (`T ≥ 2` steps).
    pub fn forward_element(
        &self,
        cfg: &ModelConfig,
        window: &NoteStateMatrix,
        masks: Option<&SampleMasks<F>>,
        keep_cache: bool,
    ) -> ElementForward<F> {
        let (n, t) = (window.n_notes(), window.n_steps());
        assert!(t >= 2, "need at least two steps to predict one");
        let features = cfg.kernel.expand_matrix::<F>(window);
        let flen = cfg.kernel.feature_len();
        let time = self.time.forward(
            &features[..(t - 1) * n * flen],
            t - 1,
            n,
            masks.map(|m| m.time.as_slice()),
            None,
            keep_cache,
        );
        let (logits, note_out, note_cache) = self.note_forward(
            &time.output,
            window,
            masks.map(|m| m.note.as_slice()),
            keep_cache,
        );
        ElementForward {
            time: time.cache,
            note: note_cache,
            note_out,
            logits,
        }
    }

    /// Masked cross-entropy sum of one element and, accumulated into
    /// `grads`, its gradient scaled by `scale`.
    pub fn element_loss_grad(
        &self,
        cfg: &ModelConfig,
        window: &NoteStateMatrix,
        masks: Option<&SampleMasks<F>>,
        scale: F,
        grads: &mut ModelParams<F>,
    ) -> f64 {
        let fwd = self.forward_element(cfg, window, masks, true);
        let mut dlogits = alloc::vec![F::zero(); fwd.logits.len()];
        let ce = element_ce(&fwd.logits, window, scale, Some(&mut dlogits));
        self.backward_element(&fwd, window, &dlogits, grads);
        ce
    }

    /// Backpropagate logit gradients of one element into `grads`.
    pub fn backward_element(
        &self,
        fwd: &ElementForward<F>,
        window: &NoteStateMatrix,
        dlogits: &[F],
        grads: &mut ModelParams<F>,
    ) {
        let (n_notes, rows) = (window.n_notes(), window.n_steps() - 1);
        let hn = self.note.n_out();
        let ht = self.time.n_out();
        let cells = n_notes * rows;
        gemm_acc(
            2,
            cells,
            hn,
            dlogits,
            Op::T,
            &fwd.note_out,
            Op::N,
            &mut grads.out_w,
        );
        for pair in dlogits.chunks_exact(2) {
            grads.out_b[0] = grads.out_b[0] + pair[0];
            grads.out_b[1] = grads.out_b[1] + pair[1];
        }
        let mut d_note_out = alloc::vec![F::zero(); cells * hn];
        gemm_acc(
            cells,
            2,
            hn,
            dlogits,
            Op::N,
            &self.out_w,
            Op::N,
            &mut d_note_out,
        );
        let d_note_in = self.note.backward(
            fwd.note.as_ref().expect("note cache"),
            &d_note_out,
            &mut grads.note,
        );

        let width = ht + 2;
        let mut d_time = alloc::vec![F::zero(); rows * n_notes * ht];
        for n in 0..n_notes {
            for t in 0..rows {
                let src = &d_note_in[(n * rows + t) * width..(n * rows + t) * width + ht];
                d_time[(t * n_notes + n) * ht..(t * n_notes + n + 1) * ht].copy_from_slice(src);
            }
        }
        self.time.backward(
            fwd.time.as_ref().expect("time cache"),
            &d_time,
            &mut grads.time,
        );
    }

    /// Mean loss of a batch with its exact gradient, elements in order.
    pub fn batch_loss_grad(
        &self,
        cfg: &ModelConfig,
        batch: &NoteStateBatch,
        masks: Option<&[SampleMasks<F>]>,
    ) -> (LossValue, ModelParams<F>) {
        let mut grads = self.zeros_like();
        let scale =
            F::from_f64(1.0 / (batch.len() * batch.n_notes() * (batch.n_steps() - 1)) as f64);
        let mut total = 0.0;
        for (b, m) in batch.matrices().iter().enumerate() {
            total += self.element_loss_grad(cfg, m, masks.map(|ms| &ms[b]), scale, &mut grads);
        }
        (
            normalize(total, batch.len(), batch.n_notes(), batch.n_steps()),
            grads,
        )
    }

    /// Loss of a batch without keeping caches.
    pub fn batch_loss(
        &self,
        cfg: &ModelConfig,
        batch: &NoteStateBatch,
        masks: Option<&[SampleMasks<F>]>,
    ) -> LossValue {
        let total: f64 = batch
            .matrices()
            .iter()
            .enumerate()
            .map(|(b, m)| {
                let fwd = self.forward_element(cfg, m, masks.map(|ms| &ms[b]), false);
                element_ce(&fwd.logits, m, F::one(), None)
            })
            .sum();
        normalize(total, batch.len(), batch.n_notes(), batch.n_steps())
    }
}

/// Sum the per-element results of [`ModelParams::element_loss_grad`] run
/// independently into one batch result; used when elements are computed in
/// parallel.
pub fn reduce_elements<F: Scalar>(
    parts: Vec<(f64, ModelParams<F>)>,
    batch: usize,
    n_notes: usize,
    n_steps: usize,
) -> (LossValue, ModelParams<F>) {
    let mut iter = parts.into_iter();
    let (mut total, mut grads) = iter.next().expect("at least one element");
    for (ce, g) in iter {
        total += ce;
        grads.add_scaled(&g, F::one());
    }
    (normalize(total, batch, n_notes, n_steps), grads)
}
