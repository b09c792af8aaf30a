//! Binary play/articulate grid over notes × time steps, and batching.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::midi::{MidiDocument, NoteEvent};

/// One cell of the grid. The articulated-but-not-played state cannot be
/// represented.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum NoteState {
    #[default]
    Rest = 0b00,
    Sustain = 0b10,
    Articulate = 0b11,
}

impl NoteState {
    #[inline]
    pub fn play(self) -> bool {
        self != NoteState::Rest
    }

    #[inline]
    pub fn articulate(self) -> bool {
        self == NoteState::Articulate
    }

    /// Build from `(p, a)` bits; `None` for the forbidden `a = 1, p = 0`.
    pub fn from_bits(play: bool, articulate: bool) -> Option<Self> {
        match (play, articulate) {
            (false, false) => Some(NoteState::Rest),
            (true, false) => Some(NoteState::Sustain),
            (true, true) => Some(NoteState::Articulate),
            (false, true) => None,
        }
    }
}

/// `n_notes × n_steps` grid; row 0 is MIDI pitch `low_note`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NoteStateMatrix {
    low_note: u8,
    n_notes: usize,
    n_steps: usize,
    // row-major: cells[note * n_steps + step]
    cells: Vec<NoteState>,
}

impl NoteStateMatrix {
    pub fn new(low_note: u8, n_notes: usize, n_steps: usize) -> Result<Self> {
        if n_notes == 0 || usize::from(low_note) + n_notes > 128 {
            return Err(Error::InvalidConfig(alloc::format!(
                "note range {low_note}+{n_notes} outside MIDI pitches"
            )));
        }
        Ok(NoteStateMatrix {
            low_note,
            n_notes,
            n_steps,
            cells: alloc::vec![NoteState::Rest; n_notes * n_steps],
        })
    }

    /// Build from per-cell `(p, a)` bits in row-major order.
    pub fn from_bits(
        low_note: u8,
        n_notes: usize,
        n_steps: usize,
        bits: &[(bool, bool)],
    ) -> Result<Self> {
        let mut m = Self::new(low_note, n_notes, n_steps)?;
        if bits.len() != n_notes * n_steps {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} cells for a {n_notes}x{n_steps} grid",
                bits.len()
            )));
        }
        for (i, &(p, a)) in bits.iter().enumerate() {
            m.cells[i] = NoteState::from_bits(p, a).ok_or(Error::InvariantViolation {
                note: i / n_steps.max(1),
                step: i % n_steps.max(1),
            })?;
        }
        Ok(m)
    }

    pub fn low_note(&self) -> u8 {
        self.low_note
    }

    pub fn n_notes(&self) -> usize {
        self.n_notes
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn get(&self, note: usize, step: usize) -> NoteState {
        debug_assert!(note < self.n_notes && step < self.n_steps);
        self.cells[note * self.n_steps + step]
    }

    #[inline]
    pub fn set(&mut self, note: usize, step: usize, state: NoteState) {
        assert!(
            note < self.n_notes && step < self.n_steps,
            "cell ({note}, {step}) out of range"
        );
        self.cells[note * self.n_steps + step] = state;
    }

    pub fn row(&self, note: usize) -> &[NoteState] {
        &self.cells[note * self.n_steps..(note + 1) * self.n_steps]
    }

    /// MIDI pitch of row `note`.
    pub fn pitch(&self, note: usize) -> u8 {
        self.low_note + note as u8
    }

    pub fn same_range(&self, other: &Self) -> bool {
        self.low_note == other.low_note && self.n_notes == other.n_notes
    }

    /// Copy of steps `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> NoteStateMatrix {
        assert!(start + len <= self.n_steps, "window past end of matrix");
        let mut cells = Vec::with_capacity(self.n_notes * len);
        for n in 0..self.n_notes {
            cells.extend_from_slice(&self.row(n)[start..start + len]);
        }
        NoteStateMatrix {
            low_note: self.low_note,
            n_notes: self.n_notes,
            n_steps: len,
            cells,
        }
    }

    /// Append one step given as a column of `n_notes` cells.
    pub fn push_step(&mut self, column: &[NoteState]) {
        assert_eq!(column.len(), self.n_notes, "column height");
        let old = self.n_steps;
        let mut cells = Vec::with_capacity(self.n_notes * (old + 1));
        for (n, &c) in column.iter().enumerate() {
            cells.extend_from_slice(&self.cells[n * old..(n + 1) * old]);
            cells.push(c);
        }
        self.cells = cells;
        self.n_steps = old + 1;
    }

    pub fn column(&self, step: usize) -> Vec<NoteState> {
        (0..self.n_notes).map(|n| self.get(n, step)).collect()
    }

    pub fn played_count(&self) -> usize {
        self.cells.iter().filter(|c| c.play()).count()
    }

    /// Split each maximal run of played cells into notes, starting a new
    /// note at every interior articulation.
    pub fn to_events(&self, ticks_per_step: u64) -> Vec<NoteEvent> {
        let mut out = Vec::new();
        for n in 0..self.n_notes {
            let row = self.row(n);
            let mut onset: Option<usize> = None;
            for (t, &cell) in row.iter().enumerate() {
                let starts_new = cell.articulate() || (cell.play() && onset.is_none());
                if (starts_new || !cell.play()) && onset.is_some() {
                    let on = onset.take().unwrap();
                    out.push(NoteEvent::new(
                        self.pitch(n),
                        on as u64 * ticks_per_step,
                        t as u64 * ticks_per_step,
                    ));
                }
                if cell.play() && onset.is_none() {
                    onset = Some(t);
                }
            }
            if let Some(on) = onset {
                out.push(NoteEvent::new(
                    self.pitch(n),
                    on as u64 * ticks_per_step,
                    row.len() as u64 * ticks_per_step,
                ));
            }
        }
        out.sort_unstable();
        out
    }
}

/// Same-shaped matrices stacked along a batch axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoteStateBatch {
    matrices: Vec<NoteStateMatrix>,
}

impl NoteStateBatch {
    pub fn new(matrices: Vec<NoteStateMatrix>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
        if matrices
            .iter()
            .any(|m| !m.same_range(first) || m.n_steps != first.n_steps)
        {
            return Err(Error::ShapeMismatch("batch members differ in shape".into()));
        }
        Ok(NoteStateBatch { matrices })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[NoteStateMatrix] {
        &self.matrices
    }

    pub fn n_notes(&self) -> usize {
        self.matrices[0].n_notes
    }

    pub fn n_steps(&self) -> usize {
        self.matrices[0].n_steps
    }

    pub fn low_note(&self) -> u8 {
        self.matrices[0].low_note
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantizeOptions {
    pub steps_per_measure: usize,
    pub low_note: u8,
    pub n_notes: usize,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        QuantizeOptions {
            steps_per_measure: 16,
            low_note: 21,
            n_notes: 88,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quantized {
    pub matrix: NoteStateMatrix,
    /// Notes placed on the grid.
    pub kept: usize,
    /// Notes outside the pitch range.
    pub dropped: usize,
}

/// Quantize a parsed document onto the grid, assuming 4/4 throughout.
pub fn quantize(doc: &MidiDocument, opts: &QuantizeOptions) -> Result<Quantized> {
    quantize_events(doc.notes(), u64::from(doc.ticks_per_quarter), opts)
}

/// Quantize tick-timed notes. A step spans `4 * ticks_per_quarter /
/// steps_per_measure` ticks; onsets snap down, offsets snap up, and every
/// onset articulates even inside an already sounding note.
pub fn quantize_events(
    events: &[NoteEvent],
    ticks_per_quarter: u64,
    opts: &QuantizeOptions,
) -> Result<Quantized> {
    if ticks_per_quarter == 0 {
        return Err(Error::InvalidConfig(
            "ticks_per_quarter must be positive".into(),
        ));
    }
    let spm = opts.steps_per_measure as u64;
    if spm == 0 || !spm.is_multiple_of(4) {
        return Err(Error::InvalidConfig(
            "steps_per_measure must be a positive multiple of 4".into(),
        ));
    }
    let measure = 4 * ticks_per_quarter;
    let floor_step = |tick: u64| (tick * spm / measure) as usize;
    let ceil_step = |tick: u64| (tick * spm).div_ceil(measure) as usize;

    let low = u64::from(opts.low_note);
    let high = low + opts.n_notes as u64;
    let (inside, outside): (Vec<&NoteEvent>, Vec<&NoteEvent>) = events
        .iter()
        .partition(|e| (low..high).contains(&u64::from(e.pitch)));
    if inside.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let n_steps = inside
        .iter()
        .map(|e| ceil_step(e.offset_tick))
        .max()
        .unwrap_or(0);
    let mut m = NoteStateMatrix::new(opts.low_note, opts.n_notes, n_steps)?;
    for e in &inside {
        let row = usize::from(e.pitch - opts.low_note);
        let first = floor_step(e.onset_tick);
        for t in first..ceil_step(e.offset_tick) {
            if m.get(row, t) == NoteState::Rest {
                m.set(row, t, NoteState::Sustain);
            }
        }
        m.set(row, first, NoteState::Articulate);
    }
    Ok(Quantized {
        matrix: m,
        kept: inside.len(),
        dropped: outside.len(),
    })
}

/// Draw `batch_size` windows of `seq_len` steps, uniformly over all
/// `(matrix, start)` pairs whose start lies on a measure boundary and whose
/// window fits inside the matrix.
pub fn sample_batch<R: Rng + ?Sized>(
    matrices: &[NoteStateMatrix],
    batch_size: usize,
    seq_len: usize,
    steps_per_measure: usize,
    rng: &mut R,
) -> Result<NoteStateBatch> {
    if batch_size == 0 || seq_len == 0 || steps_per_measure == 0 {
        return Err(Error::InvalidConfig(
            "batch size, sequence length and measure length must be positive".into(),
        ));
    }
    if let Some(first) = matrices.first() {
        if matrices.iter().any(|m| !m.same_range(first)) {
            return Err(Error::ShapeMismatch(
                "corpus matrices differ in note range".into(),
            ));
        }
    }
    let starts_in = |m: &NoteStateMatrix| {
        if m.n_steps < seq_len {
            0
        } else {
            (m.n_steps - seq_len) / steps_per_measure + 1
        }
    };
    let total: usize = matrices.iter().map(starts_in).sum();
    if total == 0 {
        return Err(Error::NoEligibleSource { needed: seq_len });
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let mut pick = if total == 1 {
            0
        } else {
            rng.gen_range(0..total)
        };
        for m in matrices {
            let k = starts_in(m);
            if pick < k {
                out.push(m.window(pick * steps_per_measure, seq_len));
                break;
            }
            pick -= k;
        }
    }
    NoteStateBatch::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn opts() -> QuantizeOptions {
        QuantizeOptions::default()
    }

    #[test]
    fn quarter_note_fills_four_sixteenths() {
        let q = quantize_events(&[NoteEvent::new(60, 0, 480)], 480, &opts()).unwrap();
        let m = &q.matrix;
        assert_eq!(m.n_steps(), 4);
        assert_eq!(
            m.row(39),
            &[
                NoteState::Articulate,
                NoteState::Sustain,
                NoteState::Sustain,
                NoteState::Sustain
            ]
        );
        assert_eq!(m.played_count(), 4);
        assert_eq!((q.kept, q.dropped), (1, 0));
    }

    #[test]
    fn repeated_eighths_rearticulate() {
        let ev = [NoteEvent::new(60, 0, 240), NoteEvent::new(60, 240, 480)];
        let m = quantize_events(&ev, 480, &opts()).unwrap().matrix;
        assert_eq!(
            m.row(39),
            &[
                NoteState::Articulate,
                NoteState::Sustain,
                NoteState::Articulate,
                NoteState::Sustain
            ]
        );
    }

    #[test]
    fn out_of_range_notes_are_counted() {
        let ev = [
            NoteEvent::new(10, 0, 240),
            NoteEvent::new(60, 0, 240),
            NoteEvent::new(120, 0, 240),
        ];
        let q = quantize_events(&ev, 480, &opts()).unwrap();
        assert_eq!((q.kept, q.dropped), (1, 2));
        assert_eq!(
            quantize_events(&ev[..1], 480, &opts()),
            Err(Error::EmptyDocument)
        );
        assert_eq!(
            quantize_events(&[], 480, &opts()),
            Err(Error::EmptyDocument)
        );
    }

    #[test]
    fn short_notes_survive_snapping() {
        // ticks [130, 200) with 120-tick steps lands in step 1
        let m = quantize_events(&[NoteEvent::new(60, 130, 200)], 480, &opts())
            .unwrap()
            .matrix;
        assert_eq!(m.row(39), &[NoteState::Rest, NoteState::Articulate]);
    }

    #[test]
    fn to_events_inverts_quantize_examples() {
        let mut m = NoteStateMatrix::new(21, 88, 4).unwrap();
        m.set(39, 0, NoteState::Articulate);
        for t in 1..4 {
            m.set(39, t, NoteState::Sustain);
        }
        assert_eq!(m.to_events(120), vec![NoteEvent::new(60, 0, 480)]);
        m.set(39, 2, NoteState::Articulate);
        assert_eq!(
            m.to_events(120),
            vec![NoteEvent::new(60, 0, 240), NoteEvent::new(60, 240, 480)]
        );
        assert!(NoteStateMatrix::new(21, 88, 16)
            .unwrap()
            .to_events(120)
            .is_empty());
    }

    #[test]
    fn sustain_without_onset_starts_a_note() {
        let mut m = NoteStateMatrix::new(60, 1, 3).unwrap();
        m.set(0, 1, NoteState::Sustain);
        m.set(0, 2, NoteState::Sustain);
        assert_eq!(m.to_events(10), vec![NoteEvent::new(60, 10, 30)]);
    }

    #[test]
    fn from_bits_rejects_unplayed_articulation() {
        let bits = [(true, true), (false, true)];
        assert_eq!(
            NoteStateMatrix::from_bits(60, 1, 2, &bits),
            Err(Error::InvariantViolation { note: 0, step: 1 })
        );
    }

    #[test]
    fn push_step_appends_a_column() {
        let mut m = NoteStateMatrix::new(60, 2, 1).unwrap();
        m.set(1, 0, NoteState::Articulate);
        m.push_step(&[NoteState::Articulate, NoteState::Sustain]);
        assert_eq!(m.n_steps(), 2);
        assert_eq!(m.row(0), &[NoteState::Rest, NoteState::Articulate]);
        assert_eq!(m.row(1), &[NoteState::Articulate, NoteState::Sustain]);
    }

    fn corpus() -> Vec<NoteStateMatrix> {
        let mut out = Vec::new();
        for (k, len) in [40usize, 64, 20].into_iter().enumerate() {
            let mut m = NoteStateMatrix::new(21, 88, len).unwrap();
            for t in 0..len {
                m.set((k * 7 + t) % 88, t, NoteState::Articulate);
            }
            out.push(m);
        }
        out
    }

    #[test]
    fn single_exact_window_is_deterministic() {
        let c = corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&c[1..2], 1, 64, 16, &mut rng).unwrap();
        assert_eq!(b.matrices()[0], c[1]);
    }

    #[test]
    fn no_eligible_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            sample_batch(&corpus(), 2, 65, 16, &mut rng),
            Err(Error::NoEligibleSource { needed: 65 })
        );
    }

    #[test]
    fn seeded_batches_repeat_and_are_measure_aligned_subslices() {
        let c = corpus();
        let a = sample_batch(&c, 4, 16, 16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_batch(&c, 4, 16, 16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        for w in a.matrices() {
            let found = c.iter().any(|m| {
                (0..m.n_steps().saturating_sub(15))
                    .step_by(16)
                    .any(|s| m.window(s, 16) == *w)
            });
            assert!(found);
        }
    }
}
