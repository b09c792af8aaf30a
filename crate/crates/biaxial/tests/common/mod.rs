#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biaxial_core::midi::DEFAULT_TEMPO_US_PER_QUARTER;
use biaxial_core::{write_midi, NoteEvent, NoteState, NoteStateMatrix};

pub fn biaxial(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biaxial"))
        .args(args)
        .env_remove("BIAXIAL_CONFIG")
        .output()
        .expect("spawn biaxial")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Arpeggiated line over pitches 60..72, one eighth note per step pair.
pub fn melody_midi(n_notes: usize) -> Vec<u8> {
    let scale = [60u8, 62, 64, 65, 67, 69, 71];
    let events: Vec<NoteEvent> = (0..n_notes as u64)
        .map(|i| NoteEvent::new(scale[(i as usize * 3) % 7], i * 240, i * 240 + 200))
        .collect();
    write_midi(&events, 480, DEFAULT_TEMPO_US_PER_QUARTER)
}

/// Eight 4/4 measures at sixteenth resolution on the 88-key range: a
/// sustained triad per measure, a quarter-note bass and an eighth-note
/// melody over a two-chord-per-phrase progression.
pub fn excerpt() -> NoteStateMatrix {
    let chords: [[u8; 3]; 4] = [[60, 64, 67], [57, 60, 64], [53, 57, 60], [55, 59, 62]];
    let melody = [
        72u8, 74, 76, 77, 79, 77, 76, 74, 72, 71, 72, 74, 76, 74, 72, 71,
    ];
    let mut m = NoteStateMatrix::new(21, 88, 128).unwrap();
    let mut put = |pitch: u8, t: usize, onset: bool| {
        m.set(
            usize::from(pitch - 21),
            t,
            if onset {
                NoteState::Articulate
            } else {
                NoteState::Sustain
            },
        );
    };
    for t in 0..128 {
        let chord = chords[(t / 32) % 4];
        for &c in &chord {
            put(c, t, t % 16 == 0);
        }
        put(
            chord[0] - 12 - if (t / 4) % 2 == 1 { 5 } else { 0 },
            t,
            t % 4 == 0,
        );
        put(melody[(t / 2) % 16], t, t % 2 == 0);
    }
    m
}
