//! Core of a bi-axial LSTM model of polyphonic music.
//!
//! The pipeline runs MIDI bytes through [`midi`] into tick-timed note events,
//! [`note_state`] quantizes them to a binary play/articulate grid, [`kernel`]
//! expands every grid cell into a feature vector, and [`model`] runs a
//! time-axis LSTM stack (recurrent along time, tied across notes) followed by
//! a note-axis LSTM stack (recurrent along pitch, tied across time) to produce
//! play/articulate logits. [`trainer`] fits the model with Adadelta and
//! [`generate`] samples new pieces one step at a time.
//!
//! The crate is `no_std` with `alloc`; the `std` feature only switches the
//! float intrinsics and error traits to their std versions.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod generate;
pub mod gradcheck;
pub mod kernel;
pub mod linalg;
pub mod lstm;
pub mod midi;
pub mod model;
pub mod note_state;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
pub use generate::{generate, GenerationConfig, SampleTrace};
pub use kernel::{ExpandedFeatures, KernelConfig};
pub use linalg::Scalar;
pub use lstm::{DropoutMask, LstmLayer, LstmStack, LstmState};
pub use midi::{parse_midi, write_midi, MidiDocument, NoteEvent};
pub use model::{loss, loss_grad, Logits, ModelConfig, ModelParams, SampleMasks};
pub use note_state::{NoteState, NoteStateBatch, NoteStateMatrix, QuantizeOptions};
pub use optim::{OptimizerConfig, OptimizerMethod, OptimizerState};
pub use trainer::{EvalReport, RngState, StepMetrics, Trainer, TrainerRng};
