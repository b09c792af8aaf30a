//! `BAXL` checkpoint files.
//!
//! Little-endian throughout:
//!
//! ```text
//! "BAXL"  u32 version (= 1)
//! model       u32 low_note, u32 n_notes, u32 window_half_width,
//!             u32 steps_per_measure, f64 keep_prob,
//!             u32 n, n × u32 time layer sizes, u32 m, m × u32 note layer sizes
//! optimizer   u8 method (0 adadelta, 1 sgd), f64 learning_rate, f64 rho,
//!             f64 epsilon, u8 has_clip, f64 clip_norm
//! u64 iteration
//! rng         32-byte seed, u64 stream, u128 word position
//! shape table u32 blocks, then per block: u16 name length, name bytes,
//!             u32 rank, rank × u32 dims
//! parameters  f32 values of every block in table order
//! u8 has_optimizer_state, then E[g²] and E[Δx²] of every block as f32
//! 32-byte SHA-256 of all preceding bytes
//! ```
//!
//! LSTM blocks are `time.<k>.w` (`4h × in`), `time.<k>.u` (`4h × h`),
//! `time.<k>.b` (`4h`), likewise `note.<k>.*`, then `out.w` (`2 × h`) and
//! `out.b` (`2`). Gate rows within each `4h` block are ordered input,
//! forget, cell candidate, output.

use std::path::Path;

use biaxial_core::model::ModelParams;
use biaxial_core::{
    KernelConfig, ModelConfig, OptimizerConfig, OptimizerMethod, OptimizerState, RngState, Trainer,
    TrainerRng,
};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BAXL";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_cfg: ModelConfig,
    pub opt_cfg: OptimizerConfig,
    pub params: ModelParams<f32>,
    pub opt_state: Option<OptimizerState<f32>>,
    pub iteration: u64,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            model_cfg: t.model_cfg.clone(),
            opt_cfg: t.opt_cfg,
            params: t.params.clone(),
            opt_state: Some(t.opt_state.clone()),
            iteration: t.iteration,
            rng: RngState::capture(&t.rng),
        }
    }

    pub fn into_trainer(self) -> Trainer {
        let opt_state = self
            .opt_state
            .unwrap_or_else(|| OptimizerState::new(&self.params));
        let rng: TrainerRng = self.rng.restore();
        Trainer {
            model_cfg: self.model_cfg,
            opt_cfg: self.opt_cfg,
            params: self.params,
            opt_state,
            iteration: self.iteration,
            rng,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        let c = &self.model_cfg;
        put_u32(&mut w, u32::from(c.low_note));
        put_u32(&mut w, c.n_notes as u32);
        put_u32(&mut w, c.kernel.window_half_width as u32);
        put_u32(&mut w, c.kernel.steps_per_measure as u32);
        w.extend_from_slice(&c.keep_prob.to_le_bytes());
        for sizes in [&c.time_layers, &c.note_layers] {
            put_u32(&mut w, sizes.len() as u32);
            for &s in sizes.iter() {
                put_u32(&mut w, s as u32);
            }
        }
        let o = &self.opt_cfg;
        w.push(match o.method {
            OptimizerMethod::Adadelta => 0,
            OptimizerMethod::Sgd => 1,
        });
        for v in [o.learning_rate, o.rho, o.epsilon] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        w.push(u8::from(o.clip_norm.is_some()));
        w.extend_from_slice(&o.clip_norm.unwrap_or(0.0).to_le_bytes());
        w.extend_from_slice(&self.iteration.to_le_bytes());
        w.extend_from_slice(&self.rng.seed);
        w.extend_from_slice(&self.rng.stream.to_le_bytes());
        w.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        let shapes = block_shapes(&self.params);
        put_u32(&mut w, shapes.len() as u32);
        for (name, dims) in &shapes {
            w.extend_from_slice(&(name.len() as u16).to_le_bytes());
            w.extend_from_slice(name.as_bytes());
            put_u32(&mut w, dims.len() as u32);
            for &d in dims {
                put_u32(&mut w, d as u32);
            }
        }
        for (_, block) in self.params.blocks() {
            put_f32s(&mut w, block);
        }
        match &self.opt_state {
            Some(st) => {
                w.push(1);
                for b in st.mean_sq_grad.iter().chain(&st.mean_sq_update) {
                    put_f32s(&mut w, b);
                }
            }
            None => w.push(0),
        }
        let digest = Sha256::digest(&w);
        w.extend_from_slice(&digest);
        w
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 32 || &bytes[..4] != MAGIC {
            return Err(Error::format("checkpoint", "missing BAXL magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::ChecksumMismatch);
        }
        let mut r = Cursor { data: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let low_note = u8::try_from(r.u32()?)
            .map_err(|_| Error::format("checkpoint", "low note out of range"))?;
        let n_notes = r.u32()? as usize;
        let window_half_width = r.u32()? as usize;
        let steps_per_measure = r.u32()? as usize;
        let keep_prob = r.f64()?;
        let mut sizes = || -> Result<Vec<usize>> {
            let n = r.u32()? as usize;
            (0..n).map(|_| r.u32().map(|v| v as usize)).collect()
        };
        let time_layers = sizes()?;
        let note_layers = sizes()?;
        let model_cfg = ModelConfig {
            low_note,
            n_notes,
            time_layers,
            note_layers,
            kernel: KernelConfig {
                window_half_width,
                steps_per_measure,
            },
            keep_prob,
        };
        model_cfg.validate()?;
        let method = match r.u8()? {
            0 => OptimizerMethod::Adadelta,
            1 => OptimizerMethod::Sgd,
            m => {
                return Err(Error::format(
                    "checkpoint",
                    format!("unknown optimizer id {m}"),
                ))
            }
        };
        let (learning_rate, rho, epsilon) = (r.f64()?, r.f64()?, r.f64()?);
        let has_clip = r.u8()? == 1;
        let clip = r.f64()?;
        let opt_cfg = OptimizerConfig {
            method,
            learning_rate,
            rho,
            epsilon,
            clip_norm: has_clip.then_some(clip),
        };
        let iteration = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());

        let mut params = ModelParams::<f32>::zeros(&model_cfg);
        let expect = block_shapes(&params);
        let n_blocks = r.u32()? as usize;
        if n_blocks != expect.len() {
            return Err(Error::format(
                "checkpoint",
                "shape table does not match model configuration",
            ));
        }
        for (name, dims) in &expect {
            let len = usize::from(r.u16()?);
            let got_name = r.take(len)?;
            let rank = r.u32()? as usize;
            let got_dims: Vec<usize> = (0..rank)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Result<_>>()?;
            if got_name != name.as_bytes() || &got_dims != dims {
                return Err(Error::format(
                    "checkpoint",
                    format!("unexpected shape entry for {name}"),
                ));
            }
        }
        for (_, block) in params.blocks_mut() {
            r.f32s(block)?;
        }
        let opt_state = match r.u8()? {
            0 => None,
            1 => {
                let mut st = OptimizerState::new(&params);
                for b in st
                    .mean_sq_grad
                    .iter_mut()
                    .chain(st.mean_sq_update.iter_mut())
                {
                    r.f32s(b)?;
                }
                Some(st)
            }
            _ => return Err(Error::format("checkpoint", "bad optimizer-state flag")),
        };
        if r.pos != body.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Checkpoint {
            model_cfg,
            opt_cfg,
            params,
            opt_state,
            iteration,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

fn block_shapes(p: &ModelParams<f32>) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (prefix, stack) in [("time", &p.time), ("note", &p.note)] {
        for (k, l) in stack.layers.iter().enumerate() {
            let g = 4 * l.n_hidden;
            out.push((format!("{prefix}.{k}.w"), vec![g, l.n_in]));
            out.push((format!("{prefix}.{k}.u"), vec![g, l.n_hidden]));
            out.push((format!("{prefix}.{k}.b"), vec![g]));
        }
    }
    out.push(("out.w".into(), vec![2, p.note.n_out()]));
    out.push(("out.b".into(), vec![2]));
    out
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(w: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, out: &mut [f32]) -> Result<()> {
        let raw = self.take(out.len() * 4)?;
        for (v, chunk) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    }
}
