//! Training loop over a loaded corpus.

use std::path::Path;

use biaxial_core::{NoteStateMatrix, StepMetrics, Trainer};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::Schedule;
use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::metrics::MetricLog;

/// Where a run writes its artifacts.
pub struct Outputs<'a> {
    pub checkpoint: &'a Path,
    pub manifest: Option<&'a RunManifest>,
    pub log: Option<&'a mut MetricLog>,
}

pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| {
            Error::Core(biaxial_core::Error::InvalidConfig(format!(
                "thread pool: {e}"
            )))
        })
}

/// One iteration with batch elements spread over `pool`. Gradients are
/// reduced in batch order, so the result does not depend on the number of
/// threads.
pub fn parallel_step(
    trainer: &mut Trainer,
    corpus: &[NoteStateMatrix],
    batch_size: usize,
    seq_len: usize,
    pool: &rayon::ThreadPool,
) -> biaxial_core::Result<StepMetrics> {
    let prepared = trainer.prepare(corpus, batch_size, seq_len)?;
    let t = &*trainer;
    let parts = pool.install(|| {
        (0..prepared.batch.len())
            .into_par_iter()
            .map(|b| t.element_grad(&prepared, b))
            .collect()
    });
    trainer.finish(&prepared, parts)
}

fn save(trainer: &Trainer, out: &Outputs<'_>) -> Result<()> {
    Checkpoint::from_trainer(trainer).save(out.checkpoint)?;
    if let Some(m) = out.manifest {
        m.save(out.checkpoint)?;
    }
    Ok(())
}

/// Run `schedule.iterations` further iterations. Writes a checkpoint every
/// `checkpoint_every` iterations (0 disables) and always at the end, and
/// logs every `log_every` iterations (0 disables).
pub fn run(
    trainer: &mut Trainer,
    corpus: &[NoteStateMatrix],
    schedule: &Schedule,
    mut out: Outputs<'_>,
) -> Result<Vec<StepMetrics>> {
    trainer.check_corpus(corpus)?;
    let pool = thread_pool(schedule.threads)?;
    let mut logged = Vec::new();
    for _ in 0..schedule.iterations {
        let iteration = trainer.iteration + 1;
        let m = parallel_step(
            trainer,
            corpus,
            schedule.batch_size,
            schedule.seq_len,
            &pool,
        )
        .map_err(|source| match source {
            e @ biaxial_core::Error::NonFiniteGradient { .. } => Error::Training {
                iteration,
                source: e,
            },
            e => Error::Core(e),
        })?;
        if schedule.log_every > 0 && m.iteration % schedule.log_every == 0 {
            if let Some(log) = out.log.as_deref_mut() {
                log.record(&m)?;
            }
            logged.push(m);
        }
        if schedule.checkpoint_every > 0 && m.iteration % schedule.checkpoint_every == 0 {
            save(trainer, &out)?;
        }
    }
    save(trainer, &out)?;
    Ok(logged)
}
