//! Corpus ingestion: MIDI directory to NSM1 cache.

use std::path::{Path, PathBuf};

use biaxial_core::note_state::quantize;
use biaxial_core::{parse_midi, NoteStateMatrix, QuantizeOptions};

use crate::cache::encode_cache;
use crate::error::{Error, Result};
use crate::manifest::{render_sources, sha256_hex, sources_path, SourceEntry};

#[derive(Debug)]
pub enum FileOutcome {
    Loaded {
        path: PathBuf,
        kept: usize,
        dropped: usize,
        steps: usize,
    },
    Failed {
        path: PathBuf,
        error: Error,
    },
}

#[derive(Debug, Default)]
pub struct Corpus {
    pub matrices: Vec<NoteStateMatrix>,
    pub sources: Vec<SourceEntry>,
    pub outcomes: Vec<FileOutcome>,
}

fn is_midi(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
}

/// `.mid` / `.midi` files below `dir`, in sorted path order.
pub fn midi_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(
                path,
                e.into_io_error()
                    .unwrap_or_else(|| std::io::Error::other("directory loop")),
            )
        })?;
        if entry.file_type().is_file() && is_midi(entry.path()) {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

pub fn load_file(
    path: &Path,
    opts: &QuantizeOptions,
) -> Result<(NoteStateMatrix, usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let doc = parse_midi(&bytes)?;
    let q = quantize(&doc, opts)?;
    Ok((q.matrix, q.kept, q.dropped, bytes))
}

/// Parse and quantize every MIDI file below `dir`. Failing files are
/// recorded in `outcomes` and skipped.
pub fn load_corpus(dir: &Path, opts: &QuantizeOptions) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for path in midi_files(dir)? {
        match load_file(&path, opts) {
            Ok((matrix, kept, dropped, bytes)) => {
                corpus.sources.push(SourceEntry {
                    sha256: sha256_hex(&bytes),
                    path: path.display().to_string(),
                });
                corpus.outcomes.push(FileOutcome::Loaded {
                    path,
                    kept,
                    dropped,
                    steps: matrix.n_steps(),
                });
                corpus.matrices.push(matrix);
            }
            Err(error) => corpus.outcomes.push(FileOutcome::Failed { path, error }),
        }
    }
    Ok(corpus)
}

/// Write the cache and its `.sources` companion.
pub fn write_corpus(cache: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::write(cache, encode_cache(&corpus.matrices)).map_err(|e| Error::io(cache, e))?;
    let sp = sources_path(cache);
    std::fs::write(&sp, render_sources(&corpus.sources)).map_err(|e| Error::io(sp, e))
}
