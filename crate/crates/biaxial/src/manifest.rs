//! Run manifest written next to every checkpoint as `<checkpoint>.manifest`.
//!
//! ```text
//! version = <crate version>
//! cache = <path>
//! cache_sha256 = <hex>
//! source = <hex> <path>        (one per corpus file)
//! [config]
//! <RunConfig::render output>
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq)]
pub struct SourceEntry {
    pub sha256: String,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub cache: String,
    pub cache_sha256: String,
    pub sources: Vec<SourceEntry>,
    pub config: RunConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Path of the source list written beside a cache.
pub fn sources_path(cache: &Path) -> PathBuf {
    let mut s = cache.as_os_str().to_owned();
    s.push(".sources");
    PathBuf::from(s)
}

pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn render_sources(sources: &[SourceEntry]) -> String {
    sources
        .iter()
        .map(|e| format!("{} {}\n", e.sha256, e.path))
        .collect()
}

pub fn parse_sources(text: &str) -> Result<Vec<SourceEntry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (sha, path) = l
                .split_once(' ')
                .ok_or_else(|| Error::format("source list", format!("bad line {l:?}")))?;
            Ok(SourceEntry {
                sha256: sha.to_string(),
                path: path.to_string(),
            })
        })
        .collect()
}

impl RunManifest {
    /// Describe a run over `cache`, reading its source list when present.
    pub fn for_cache(cache: &Path, config: &RunConfig) -> Result<Self> {
        let bytes = std::fs::read(cache).map_err(|e| Error::io(cache, e))?;
        let sp = sources_path(cache);
        let sources = match std::fs::read_to_string(&sp) {
            Ok(text) => parse_sources(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(sp, e)),
        };
        Ok(RunManifest {
            version: VERSION.to_string(),
            cache: cache.display().to_string(),
            cache_sha256: sha256_hex(&bytes),
            sources,
            config: config.clone(),
        })
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "version = {}\ncache = {}\ncache_sha256 = {}\n",
            self.version, self.cache, self.cache_sha256
        );
        for s in &self.sources {
            let _ = writeln!(out, "source = {} {}", s.sha256, s.path);
        }
        out.push_str("[config]\n");
        out.push_str(&self.config.render());
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (head, config) = text
            .split_once("[config]\n")
            .ok_or_else(|| Error::format("manifest", "missing [config] section"))?;
        let mut m = RunManifest {
            version: String::new(),
            cache: String::new(),
            cache_sha256: String::new(),
            sources: Vec::new(),
            config: RunConfig::parse(config)?,
        };
        for line in head.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::format("manifest", format!("bad line {line:?}")))?;
            match k {
                "version" => m.version = v.to_string(),
                "cache" => m.cache = v.to_string(),
                "cache_sha256" => m.cache_sha256 = v.to_string(),
                "source" => m.sources.extend(parse_sources(v)?),
                _ => return Err(Error::format("manifest", format!("unknown key {k:?}"))),
            }
        }
        Ok(m)
    }

    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        let p = manifest_path(checkpoint);
        std::fs::write(&p, self.render()).map_err(|e| Error::io(p, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn render_parse_round_trip() {
        let m = RunManifest {
            version: VERSION.into(),
            cache: "data/corpus.nsm".into(),
            cache_sha256: sha256_hex(b"x"),
            sources: vec![SourceEntry {
                sha256: sha256_hex(b"a"),
                path: "midi/a b.mid".into(),
            }],
            config: RunConfig::default(),
        };
        let back = RunManifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert!(m.render().contains("learning_rate = 1.0\n"));
        assert!(m.render().contains("optimizer = adadelta\n"));
    }
}
