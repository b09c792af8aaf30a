//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Layer lists are comma separated (`time_layers = 64,64`). `clip_norm =
//! none` disables clipping. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use biaxial_core::{ModelConfig, OptimizerConfig, OptimizerMethod};

use crate::error::{Error, Result};

/// Environment variable naming a config file when `--config` is absent.
pub const CONFIG_ENV: &str = "BIAXIAL_CONFIG";

/// Every key understood by [`RunConfig::set`], in rendering order.
pub const KEYS: &[&str] = &[
    "low_note",
    "n_notes",
    "steps_per_measure",
    "window_half_width",
    "time_layers",
    "note_layers",
    "keep_prob",
    "optimizer",
    "learning_rate",
    "rho",
    "epsilon",
    "clip_norm",
    "iterations",
    "batch_size",
    "seq_len",
    "log_every",
    "checkpoint_every",
    "seed",
    "threads",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub iterations: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            iterations: 1000,
            batch_size: 10,
            seq_len: 128,
            log_every: 10,
            checkpoint_every: 100,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                detail: format!("expected key = value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|detail| Error::Config {
                    line: i + 1,
                    detail,
                })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Assign one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let m = &mut self.model;
        let o = &mut self.optimizer;
        let s = &mut self.schedule;
        match key {
            "low_note" => m.low_note = num(key, value)?,
            "n_notes" => m.n_notes = num(key, value)?,
            "steps_per_measure" => m.kernel.steps_per_measure = num(key, value)?,
            "window_half_width" => m.kernel.window_half_width = num(key, value)?,
            "time_layers" => m.time_layers = list(key, value)?,
            "note_layers" => m.note_layers = list(key, value)?,
            "keep_prob" => m.keep_prob = num(key, value)?,
            "optimizer" => {
                o.method = OptimizerMethod::parse(value)
                    .ok_or_else(|| format!("unknown optimizer {value:?}"))?
            }
            "learning_rate" => o.learning_rate = num(key, value)?,
            "rho" => o.rho = num(key, value)?,
            "epsilon" => o.epsilon = num(key, value)?,
            "clip_norm" => {
                o.clip_norm = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "iterations" => s.iterations = num(key, value)?,
            "batch_size" => s.batch_size = num(key, value)?,
            "seq_len" => s.seq_len = num(key, value)?,
            "log_every" => s.log_every = num(key, value)?,
            "checkpoint_every" => s.checkpoint_every = num(key, value)?,
            "seed" => s.seed = num(key, value)?,
            "threads" => s.threads = num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        let s = &self.schedule;
        let bad = |d: &str| Err(Error::Core(biaxial_core::Error::InvalidConfig(d.into())));
        if s.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if s.seq_len < 2 {
            return bad("seq_len must be at least 2");
        }
        Ok(())
    }

    /// Canonical text form; [`RunConfig::parse`] reads it back unchanged.
    pub fn render(&self) -> String {
        let m = &self.model;
        let o = &self.optimizer;
        let s = &self.schedule;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let values = [
            m.low_note.to_string(),
            m.n_notes.to_string(),
            m.kernel.steps_per_measure.to_string(),
            m.kernel.window_half_width.to_string(),
            join(&m.time_layers),
            join(&m.note_layers),
            fmt_f64(m.keep_prob),
            o.method.name().to_string(),
            fmt_f64(o.learning_rate),
            fmt_f64(o.rho),
            fmt_f64(o.epsilon),
            o.clip_norm.map_or_else(|| "none".to_string(), fmt_f64),
            s.iterations.to_string(),
            s.batch_size.to_string(),
            s.seq_len.to_string(),
            s.log_every.to_string(),
            s.checkpoint_every.to_string(),
            s.seed.to_string(),
            s.threads.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Shortest decimal that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn list(key: &str, value: &str) -> std::result::Result<Vec<usize>, String> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_optimizer_settings() {
        let c = RunConfig::default();
        assert_eq!(c.optimizer.method, OptimizerMethod::Adadelta);
        assert_eq!(c.optimizer.learning_rate, 1.0);
        assert_eq!(c.optimizer.rho, 0.95);
        assert_eq!(c.optimizer.epsilon, 1e-6);
        assert_eq!(c.optimizer.clip_norm, None);
    }

    #[test]
    fn parse_with_comments_and_lists() {
        let c = RunConfig::parse(
            "# tiny\ntime_layers = 8, 4\nnote_layers=2\n\nclip_norm = 5 # on\nseed=9\n",
        )
        .unwrap();
        assert_eq!(c.model.time_layers, vec![8, 4]);
        assert_eq!(c.model.note_layers, vec![2]);
        assert_eq!(c.optimizer.clip_norm, Some(5.0));
        assert_eq!(c.schedule.seed, 9);
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.set("epsilon", "1e-7").unwrap();
        c.set("keep_prob", "0.6").unwrap();
        c.set("optimizer", "sgd").unwrap();
        let back = RunConfig::parse(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.render(), c.render());
    }

    #[test]
    fn errors_name_the_line() {
        match RunConfig::parse("seed = 1\nbogus = 2\n") {
            Err(Error::Config { line, detail }) => {
                assert_eq!(line, 2);
                assert!(detail.contains("bogus"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            RunConfig::parse("seed"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("n_notes = many"),
            Err(Error::Config { .. })
        ));
    }
}
