//! Standard MIDI File (SMF 1.0) reader and writer.
//!
//! Only formats 0 and 1 with metrical (ticks-per-quarter) timing are
//! accepted. Parsing accumulates delta-times into absolute ticks, applies
//! running status, treats note-on with velocity 0 as note-off and drops
//! everything on channel 10 (index 9, percussion). SysEx and meta events
//! other than tempo and end-of-track are skipped by length.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// MIDI channel index (0-based) reserved for percussion.
pub const PERCUSSION_CHANNEL: u8 = 9;
/// Velocity of every note-on emitted by [`write_midi`].
pub const WRITE_VELOCITY: u8 = 80;
/// 120 BPM.
pub const DEFAULT_TEMPO_US_PER_QUARTER: u32 = 500_000;
/// Largest value a four-byte variable-length quantity can carry.
pub const VLQ_MAX: u32 = 0x0FFF_FFFF;

/// A sounded note with absolute tick timing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset_tick: u64,
    pub offset_tick: u64,
    pub track: u16,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset_tick: u64, offset_tick: u64) -> Self {
        NoteEvent {
            pitch,
            onset_tick,
            offset_tick,
            track: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.pitch <= 127 && self.offset_tick > self.onset_tick
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    NoteOn {
        channel: u8,
        pitch: u8,
        velocity: u8,
    },
    NoteOff {
        channel: u8,
        pitch: u8,
    },
    /// Microseconds per quarter note.
    Tempo(u32),
    EndOfTrack,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimedEvent {
    pub tick: u64,
    pub kind: EventKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Track {
    pub events: Vec<TimedEvent>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MidiDocument {
    pub format: u16,
    pub ticks_per_quarter: u16,
    pub tracks: Vec<Track>,
    notes: Vec<NoteEvent>,
}

impl MidiDocument {
    /// Paired notes of every track, sorted by pitch, then onset.
    pub fn notes(&self) -> &[NoteEvent] {
        &self.notes
    }

    /// The first tempo meta-event, if any. Later tempo changes are ignored.
    pub fn tempo(&self) -> Option<u32> {
        self.tracks
            .iter()
            .flat_map(|t| t.events.iter())
            .filter_map(|e| match e.kind {
                EventKind::Tempo(us) => Some((e.tick, us)),
                _ => None,
            })
            .min_by_key(|&(tick, _)| tick)
            .map(|(_, us)| us)
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let s = &self.data[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::TruncatedChunk { offset: self.pos }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn peek(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let (value, used) = decode_vlq(&self.data[self.pos..]).map_err(|e| match e {
            Error::TruncatedChunk { .. } => Error::TruncatedChunk { offset: start },
            _ => Error::InvalidEvent {
                offset: start,
                what: "variable-length quantity longer than 4 bytes",
            },
        })?;
        self.pos += used;
        Ok(value)
    }
}

/// Encode `value` (at most [`VLQ_MAX`]) as a MIDI variable-length quantity.
pub fn encode_vlq(value: u32, out: &mut Vec<u8>) {
    assert!(value <= VLQ_MAX, "VLQ value out of range");
    let mut groups = [0u8; 4];
    let mut n = 0;
    let mut v = value;
    loop {
        groups[n] = (v & 0x7F) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let cont = if i > 0 { 0x80 } else { 0 };
        out.push(groups[i] | cont);
    }
}

/// Decode a variable-length quantity, returning the value and bytes consumed.
pub fn decode_vlq(bytes: &[u8]) -> Result<(u32, usize)> {
    let mut value = 0u32;
    for i in 0..4 {
        let b = *bytes.get(i).ok_or(Error::TruncatedChunk { offset: i })?;
        value = (value << 7) | u32::from(b & 0x7F);
        if b & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    Err(Error::InvalidEvent {
        offset: 0,
        what: "variable-length quantity longer than 4 bytes",
    })
}

/// Parse a Standard MIDI File.
pub fn parse_midi(bytes: &[u8]) -> Result<MidiDocument> {
    let mut r = Reader::new(bytes);
    let magic = r
        .take(4)
        .map_err(|_| Error::MalformedHeader("file shorter than header"))?;
    if magic != b"MThd" {
        return Err(Error::MalformedHeader("missing MThd magic"));
    }
    let len = r
        .u32()
        .map_err(|_| Error::MalformedHeader("file shorter than header"))?;
    if len != 6 {
        return Err(Error::MalformedHeader("header length is not 6"));
    }
    let format = r
        .u16()
        .map_err(|_| Error::MalformedHeader("file shorter than header"))?;
    let n_tracks = r
        .u16()
        .map_err(|_| Error::MalformedHeader("file shorter than header"))?;
    let division = r
        .u16()
        .map_err(|_| Error::MalformedHeader("file shorter than header"))?;
    match format {
        0 | 1 => {}
        2 => return Err(Error::Unsupported("format 2")),
        _ => return Err(Error::MalformedHeader("unknown format")),
    }
    if division & 0x8000 != 0 {
        return Err(Error::Unsupported("SMPTE time division"));
    }
    if division == 0 {
        return Err(Error::MalformedHeader("zero ticks per quarter"));
    }
    if format == 0 && n_tracks != 1 {
        return Err(Error::MalformedHeader("format 0 must declare one track"));
    }

    let mut tracks = Vec::with_capacity(usize::from(n_tracks));
    while tracks.len() < usize::from(n_tracks) {
        if r.is_empty() {
            return Err(Error::TruncatedChunk { offset: r.pos });
        }
        let id = r.take(4)?;
        let chunk_len = r.u32()? as usize;
        let chunk_start = r.pos;
        let body = r.take(chunk_len).map_err(|_| Error::TruncatedChunk {
            offset: chunk_start,
        })?;
        if id == b"MTrk" {
            tracks.push(parse_track(body, chunk_start)?);
        }
    }

    let mut notes = Vec::new();
    for (index, track) in tracks.iter().enumerate() {
        pair_notes(track, index as u16, &mut notes)?;
    }
    notes.sort_unstable();

    Ok(MidiDocument {
        format,
        ticks_per_quarter: division,
        tracks,
        notes,
    })
}

fn parse_track(body: &[u8], base: usize) -> Result<Track> {
    let mut r = Reader::new(body);
    let mut events = Vec::new();
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let rebase = |e: Error| match e {
        Error::TruncatedChunk { offset } => Error::TruncatedChunk {
            offset: base + offset,
        },
        Error::InvalidEvent { offset, what } => Error::InvalidEvent {
            offset: base + offset,
            what,
        },
        other => other,
    };

    while !r.is_empty() {
        let delta = r.vlq().map_err(rebase)?;
        tick += u64::from(delta);
        let at = r.pos;
        let lead = r
            .peek()
            .ok_or(Error::TruncatedChunk { offset: base + at })?;
        match lead {
            0xFF => {
                r.pos += 1;
                running = None;
                let kind = r.u8().map_err(rebase)?;
                let len = r.vlq().map_err(rebase)? as usize;
                let data = r.take(len).map_err(rebase)?;
                match kind {
                    0x51 => {
                        if len != 3 {
                            return Err(Error::InvalidEvent {
                                offset: base + at,
                                what: "tempo meta-event length",
                            });
                        }
                        let us = (u32::from(data[0]) << 16)
                            | (u32::from(data[1]) << 8)
                            | u32::from(data[2]);
                        events.push(TimedEvent {
                            tick,
                            kind: EventKind::Tempo(us),
                        });
                    }
                    0x2F => {
                        events.push(TimedEvent {
                            tick,
                            kind: EventKind::EndOfTrack,
                        });
                        break;
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                r.pos += 1;
                running = None;
                let len = r.vlq().map_err(rebase)? as usize;
                r.take(len).map_err(rebase)?;
            }
            0xF1..=0xFE => {
                return Err(Error::InvalidEvent {
                    offset: base + at,
                    what: "system message in track data",
                });
            }
            _ => {
                let status = if lead & 0x80 != 0 {
                    r.pos += 1;
                    running = Some(lead);
                    lead
                } else {
                    running.ok_or(Error::InvalidEvent {
                        offset: base + at,
                        what: "data byte without running status",
                    })?
                };
                let channel = status & 0x0F;
                let n_data = match status & 0xF0 {
                    0xC0 | 0xD0 => 1,
                    _ => 2,
                };
                let data = r.take(n_data).map_err(rebase)?;
                if data.iter().any(|b| b & 0x80 != 0) {
                    return Err(Error::InvalidEvent {
                        offset: base + at,
                        what: "status byte inside channel message",
                    });
                }
                if channel == PERCUSSION_CHANNEL {
                    continue;
                }
                match status & 0xF0 {
                    0x90 if data[1] > 0 => events.push(TimedEvent {
                        tick,
                        kind: EventKind::NoteOn {
                            channel,
                            pitch: data[0],
                            velocity: data[1],
                        },
                    }),
                    0x80 | 0x90 => events.push(TimedEvent {
                        tick,
                        kind: EventKind::NoteOff {
                            channel,
                            pitch: data[0],
                        },
                    }),
                    _ => {}
                }
            }
        }
    }
    Ok(Track { events })
}

/// Match note-ons to note-offs first-in first-out per (channel, pitch).
fn pair_notes(track: &Track, index: u16, out: &mut Vec<NoteEvent>) -> Result<()> {
    let mut open: Vec<Vec<u64>> = alloc::vec![Vec::new(); 16 * 128];
    for e in &track.events {
        match e.kind {
            EventKind::NoteOn { channel, pitch, .. } => {
                open[usize::from(channel) * 128 + usize::from(pitch)].push(e.tick);
            }
            EventKind::NoteOff { channel, pitch } => {
                let slot = &mut open[usize::from(channel) * 128 + usize::from(pitch)];
                if !slot.is_empty() {
                    let onset = slot.remove(0);
                    // zero-length notes carry no duration on any grid
                    if e.tick > onset {
                        out.push(NoteEvent {
                            pitch,
                            onset_tick: onset,
                            offset_tick: e.tick,
                            track: index,
                        });
                    }
                }
            }
            _ => {}
        }
    }
    for (slot_index, slot) in open.iter().enumerate() {
        if let Some(&tick) = slot.first() {
            return Err(Error::UnmatchedNoteOn {
                pitch: (slot_index % 128) as u8,
                tick,
            });
        }
    }
    Ok(())
}

/// Emit a format-0 SMF holding one tempo meta-event and the given notes.
///
/// Same-pitch notes that overlap in time are spread across channels so
/// that a first-in first-out reader pairs every note-off with its own
/// note-on. At equal ticks note-offs precede note-ons.
///
/// # Panics
/// If an event violates the [`NoteEvent`] invariants, a delta time exceeds
/// the variable-length range, or more than 15 same-pitch notes overlap.
pub fn write_midi(
    events: &[NoteEvent],
    ticks_per_quarter: u16,
    tempo_us_per_quarter: u32,
) -> Vec<u8> {
    assert!(
        ticks_per_quarter > 0 && ticks_per_quarter & 0x8000 == 0,
        "ticks per quarter out of range"
    );
    assert!(tempo_us_per_quarter <= 0x00FF_FFFF, "tempo out of range");

    let mut sorted: Vec<NoteEvent> = events.to_vec();
    sorted.sort_unstable_by_key(|n| (n.onset_tick, n.pitch, n.offset_tick));

    // (tick, is_on, channel, pitch)
    let mut messages: Vec<(u64, bool, u8, u8)> = Vec::with_capacity(sorted.len() * 2);
    // busy_until[pitch][channel]
    let mut busy_until: Vec<[u64; 16]> = alloc::vec![[0u64; 16]; 128];
    for n in &sorted {
        assert!(n.is_valid(), "invalid note event {n:?}");
        let row = &mut busy_until[usize::from(n.pitch)];
        let channel = (0u8..16)
            .filter(|&c| c != PERCUSSION_CHANNEL)
            .find(|&c| row[usize::from(c)] <= n.onset_tick)
            .expect("more than 15 overlapping notes of one pitch");
        row[usize::from(channel)] = n.offset_tick;
        messages.push((n.onset_tick, true, channel, n.pitch));
        messages.push((n.offset_tick, false, channel, n.pitch));
    }
    messages.sort_by_key(|&(tick, is_on, channel, pitch)| (tick, is_on, pitch, channel));

    let mut track = Vec::with_capacity(messages.len() * 4 + 16);
    track.extend_from_slice(&[0x00, 0xFF, 0x51, 0x03]);
    track.extend_from_slice(&tempo_us_per_quarter.to_be_bytes()[1..]);
    let mut last = 0u64;
    for &(tick, is_on, channel, pitch) in &messages {
        let delta = u32::try_from(tick - last)
            .ok()
            .filter(|&d| d <= VLQ_MAX)
            .expect("delta time out of range");
        encode_vlq(delta, &mut track);
        if is_on {
            track.extend_from_slice(&[0x90 | channel, pitch, WRITE_VELOCITY]);
        } else {
            track.extend_from_slice(&[0x80 | channel, pitch, 0x40]);
        }
        last = tick;
    }
    track.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&ticks_per_quarter.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}
