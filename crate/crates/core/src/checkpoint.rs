//! Checkpoint files.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, JSON header,
//! raw little-endian tensor payload, then the SHA-256 of everything before
//! it. Loading recomputes the dictionary from `M` and checks it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::tensor::Element;
use crate::training::Trainer;

const MAGIC: &[u8; 8] = b"MBCKPT01";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    step: u64,
    last_r1: f64,
    opt_g_steps: u64,
    opt_d_steps: u64,
    config: String,
    tensors: Vec<Entry>,
}

struct Writer<T: Element> {
    entries: Vec<Entry>,
    payload: Vec<u8>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Element> Writer<T> {
    fn put(&mut self, name: String, data: &[T]) {
        self.entries.push(Entry {
            name,
            offset: self.payload.len() as u64,
            len: data.len() as u64,
        });
        self.payload.extend(T::to_le_bytes_vec(data));
    }
}

/// Serializes the full training state.
pub fn encode<T: Element>(trainer: &Trainer<T>) -> Vec<u8> {
    let mut w = Writer::<T> {
        entries: Vec::new(),
        payload: Vec::new(),
        _t: Default::default(),
    };
    for (name, p) in trainer.generator.params() {
        w.put(format!("g/{name}"), &p.to_vec());
    }
    for (name, p) in trainer.discriminator.params() {
        w.put(format!("d/{name}"), &p.to_vec());
    }
    let (g_steps, gm, gv) = trainer.opt_g.state();
    for (i, (m, v)) in gm.iter().zip(gv).enumerate() {
        w.put(format!("opt_g/m/{i}"), m);
        w.put(format!("opt_g/v/{i}"), v);
    }
    let (d_steps, dm, dv) = trainer.opt_d.state();
    for (i, (m, v)) in dm.iter().zip(dv).enumerate() {
        w.put(format!("opt_d/m/{i}"), m);
        w.put(format!("opt_d/v/{i}"), v);
    }
    if let Some(ema) = &trainer.ema {
        for ((name, _), e) in trainer.generator.params().iter().zip(ema) {
            w.put(format!("ema/{name}"), e);
        }
    }
    let header = Header {
        version: VERSION,
        dtype: T::DTYPE.name().to_string(),
        step: trainer.step,
        last_r1: trainer.last_r1,
        opt_g_steps: g_steps,
        opt_d_steps: d_steps,
        config: trainer.config.to_toml(),
        tensors: w.entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + w.payload.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Writes atomically through a sibling temporary file.
pub fn save<T: Element>(trainer: &Trainer<T>, path: &Path) -> Result<()> {
    let bytes = encode(trainer);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming onto {}", path.display()), e))
}

struct Reader<'a> {
    header: Header,
    payload: &'a [u8],
    next: usize,
    size: usize,
}

impl Reader<'_> {
    fn take<T: Element>(&mut self, expected: &str, numel: usize) -> std::result::Result<Vec<T>, String> {
        let e = self
            .header
            .tensors
            .get(self.next)
            .ok_or_else(|| format!("missing tensor {expected}"))?;
        if e.name != expected {
            return Err(format!("expected tensor {expected}, found {}", e.name));
        }
        if e.len as usize != numel {
            return Err(format!("tensor {expected} has {} values, model needs {numel}", e.len));
        }
        let start = e.offset as usize;
        let end = start + numel * self.size;
        let bytes = self
            .payload
            .get(start..end)
            .ok_or_else(|| format!("tensor {expected} runs past the payload"))?;
        let data = T::from_le_bytes_slice(bytes);
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(format!("tensor {expected} has a non-finite value at {i}"));
        }
        self.next += 1;
        Ok(data)
    }
}

fn parse(bytes: &[u8]) -> std::result::Result<(Header, &[u8]), String> {
    if bytes.len() < 16 + 32 || &bytes[..8] != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum mismatch".into());
    }
    let hlen = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let json = body.get(16..16 + hlen).ok_or("truncated header")?;
    let header: Header = serde_json::from_slice(json).map_err(|e| format!("bad header: {e}"))?;
    if header.version != VERSION {
        return Err(format!("unsupported version {}", header.version));
    }
    Ok((header, &body[16 + hlen..]))
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Restores a trainer written by [`save`].
pub fn load<T: Element>(path: &Path) -> Result<Trainer<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint { reason, .. } => ckpt_err(path, reason),
        other => ckpt_err(path, other.to_string()),
    })
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<Trainer<T>> {
    let here = Path::new("<memory>");
    let (header, payload) = parse(bytes).map_err(|r| ckpt_err(here, r))?;
    if header.dtype != T::DTYPE.name() {
        return Err(ckpt_err(here, format!("stored as {}, loading as {}", header.dtype, T::DTYPE.name())));
    }
    let config = ExperimentConfig::from_toml(&header.config)?;
    let mut trainer = Trainer::<T>::new(config)?;
    let mut r = Reader {
        header: header.clone(),
        payload,
        next: 0,
        size: T::DTYPE.size(),
    };
    let bad = |m: String| ckpt_err(here, m);

    let mut g = Vec::new();
    for (name, p) in trainer.generator.params() {
        g.push((name.clone(), r.take::<T>(&format!("g/{name}"), p.numel()).map_err(bad)?));
    }
    let mut d = Vec::new();
    for (name, p) in trainer.discriminator.params() {
        d.push((name.clone(), r.take::<T>(&format!("d/{name}"), p.numel()).map_err(bad)?));
    }
    let read_moments = |r: &mut Reader, prefix: &str, sizes: &[usize]| -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for (i, &n) in sizes.iter().enumerate() {
            m.push(r.take::<T>(&format!("{prefix}/m/{i}"), n).map_err(bad)?);
            v.push(r.take::<T>(&format!("{prefix}/v/{i}"), n).map_err(bad)?);
        }
        Ok((m, v))
    };
    let g_sizes: Vec<usize> = trainer.generator.trainable_params().iter().map(|(_, p)| p.numel()).collect();
    let d_sizes: Vec<usize> = d.iter().map(|(_, v)| v.len()).collect();
    let (gm, gv) = read_moments(&mut r, "opt_g", &g_sizes)?;
    let (dm, dv) = read_moments(&mut r, "opt_d", &d_sizes)?;
    if trainer.ema.is_some() {
        let mut ema = Vec::new();
        for (name, p) in trainer.generator.params() {
            ema.push(r.take::<T>(&format!("ema/{name}"), p.numel()).map_err(bad)?);
        }
        trainer.ema = Some(ema);
    }
    if r.next != header.tensors.len() {
        return Err(bad(format!("{} unexpected trailing tensors", header.tensors.len() - r.next)));
    }

    // Bank refresh runs the decomposition and the orthonormality check.
    trainer
        .generator
        .load_params(&g)
        .map_err(|e| bad(format!("generator: {e}")))?;
    trainer.discriminator.load_params(&d)?;
    trainer.opt_g.load_state(header.opt_g_steps, gm, gv);
    trainer.opt_d.load_state(header.opt_d_steps, dm, dv);
    trainer.step = header.step;
    trainer.last_r1 = header.last_r1;
    Ok(trainer)
}

/// Loads only what inference needs: the config and a generator carrying
/// the averaged weights when the checkpoint has them.
pub fn load_generator(path: &Path) -> Result<(ExperimentConfig, Generator<f32>)> {
    let trainer = load::<f32>(path)?;
    let g = trainer.inference_generator()?;
    Ok((trainer.config, g))
}

/// Step counter and config without building the models.
pub fn peek(path: &Path) -> Result<(u64, ExperimentConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let (header, _) = parse(&bytes).map_err(|r| ckpt_err(path, r))?;
    Ok((header.step, ExperimentConfig::from_toml(&header.config)?))
}
