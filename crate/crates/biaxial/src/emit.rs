//! Note-state matrices to Standard MIDI File bytes.

use biaxial_core::midi::DEFAULT_TEMPO_US_PER_QUARTER;
use biaxial_core::{write_midi, NoteStateMatrix};

use crate::error::{Error, Result};

/// Ticks per quarter note for a grid of `ticks_per_step` ticks and
/// `steps_per_measure` steps per 4/4 measure.
pub fn ticks_per_quarter(ticks_per_step: u64, steps_per_measure: usize) -> Result<u16> {
    let total = ticks_per_step * steps_per_measure as u64;
    if ticks_per_step == 0 || !total.is_multiple_of(4) || total / 4 > 0x7FFF {
        return Err(Error::Core(biaxial_core::Error::InvalidConfig(format!(
            "ticks per step {ticks_per_step} gives no valid ticks-per-quarter for {steps_per_measure} steps per measure"
        ))));
    }
    Ok((total / 4) as u16)
}

pub fn emit_midi(
    m: &NoteStateMatrix,
    ticks_per_step: u64,
    steps_per_measure: usize,
) -> Result<Vec<u8>> {
    let ppq = ticks_per_quarter(ticks_per_step, steps_per_measure)?;
    Ok(write_midi(
        &m.to_events(ticks_per_step),
        ppq,
        DEFAULT_TEMPO_US_PER_QUARTER,
    ))
}
