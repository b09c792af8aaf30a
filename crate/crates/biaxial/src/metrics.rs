//! Append-only metric log: one `iteration,loss,per_step_ll,seconds` line
//! per logged iteration.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use biaxial_core::StepMetrics;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: u64,
    pub loss: f64,
    pub per_step_ll: f64,
    pub seconds: f64,
}

impl LogRecord {
    pub fn render(&self) -> String {
        format!(
            "{},{:?},{:?},{:.3}",
            self.iteration, self.loss, self.per_step_ll, self.seconds
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::format("metric log", format!("bad line {line:?}"));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        Ok(LogRecord {
            iteration: f[0].parse().map_err(|_| bad())?,
            loss: f[1].parse().map_err(|_| bad())?,
            per_step_ll: f[2].parse().map_err(|_| bad())?,
            seconds: f[3].parse().map_err(|_| bad())?,
        })
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(LogRecord::parse)
        .collect()
}

/// Appends records, timing them from creation unless the clock is disabled.
pub struct MetricLog {
    path: PathBuf,
    out: BufWriter<File>,
    start: Option<Instant>,
}

impl MetricLog {
    pub fn append(path: &Path, wall_clock: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            start: wall_clock.then(Instant::now),
        })
    }

    pub fn record(&mut self, m: &StepMetrics) -> Result<LogRecord> {
        let seconds = self.start.map_or(0.0, |s| s.elapsed().as_secs_f64());
        let rec = LogRecord {
            iteration: m.iteration,
            loss: m.loss,
            per_step_ll: m.per_step_ll,
            seconds,
        };
        writeln!(self.out, "{}", rec.render()).map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(rec)
    }
}
