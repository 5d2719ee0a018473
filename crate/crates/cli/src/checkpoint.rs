//! Versioned binary checkpoints: parameters, optimizer moments, codebook
//! state, step counter and the canonical config text, all little-endian
//! `f64`/integer records so a save/load round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use metaslot_core::codebook::PrototypeCodebook;
use metaslot_core::Tensor64;

use crate::config::TrainConfig;
use crate::error::{CliError, Result};
use crate::model::Model;
use crate::optim::AdamState;

const MAGIC: &[u8; 4] = b"MSLB";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_text: String,
    pub config_hash: u64,
    pub step: u64,
    pub params: Vec<(String, Tensor64)>,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
    pub adam_t: u64,
    pub codebook_vectors: Tensor64,
    pub codebook_last_used: Vec<u64>,
    pub codebook_ema_rate: f64,
    pub codebook_timeout: u64,
}

impl Checkpoint {
    pub fn from_parts(cfg: &TrainConfig, model: &Model, adam: &AdamState, step: u64) -> Self {
        Checkpoint {
            config_text: cfg.canonical(),
            config_hash: cfg.hash(),
            step,
            params: model
                .named_tensors()
                .into_iter()
                .map(|(name, t)| (name.to_string(), t.clone()))
                .collect(),
            adam_m: adam.m.clone(),
            adam_v: adam.v.clone(),
            adam_t: adam.t,
            codebook_vectors: model.codebook.vectors().clone(),
            codebook_last_used: model.codebook.last_used_step().to_vec(),
            codebook_ema_rate: model.codebook.ema_rate(),
            codebook_timeout: model.codebook.timeout(),
        }
    }

    /// Reconstructs the configuration and trainable state. Parameter names
    /// and shapes must match what the config would initialize.
    pub fn restore(&self) -> Result<(TrainConfig, Model, AdamState)> {
        let cfg = TrainConfig::parse(&self.config_text)?;
        if cfg.hash() != self.config_hash {
            return Err(CliError::checkpoint(
                "embedded config does not match its recorded hash",
            ));
        }
        let mut model = Model::init(&cfg)?;
        {
            let mut named = model.named_tensors_mut();
            if named.len() != self.params.len() {
                return Err(CliError::checkpoint(format!(
                    "parameter count mismatch: checkpoint has {}, model needs {}",
                    self.params.len(),
                    named.len()
                )));
            }
            for ((name, tensor), (want_name, slot)) in self.params.iter().zip(named.iter_mut()) {
                if name != want_name {
                    return Err(CliError::checkpoint(format!(
                        "parameter order mismatch: {name} vs {want_name}"
                    )));
                }
                if tensor.rows() != slot.rows() || tensor.cols() != slot.cols() {
                    return Err(CliError::checkpoint(format!("shape mismatch for {name}")));
                }
                slot.data_mut().copy_from_slice(tensor.data());
            }
        }
        model.codebook = PrototypeCodebook::new(
            self.codebook_vectors.clone(),
            self.codebook_last_used.clone(),
            self.codebook_ema_rate,
            self.codebook_timeout,
        )?;
        let adam = AdamState {
            m: self.adam_m.clone(),
            v: self.adam_v.clone(),
            t: self.adam_t,
        };
        for ((m, v), (_, p)) in adam.m.iter().zip(&adam.v).zip(&self.params) {
            if m.len() != p.len() || v.len() != p.len() {
                return Err(CliError::checkpoint("moment shape mismatch"));
            }
        }
        Ok((cfg, model, adam))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION);
        put_u64(&mut buf, self.config_hash);
        put_u64(&mut buf, self.step);
        put_bytes(&mut buf, self.config_text.as_bytes());
        put_u32(&mut buf, self.params.len() as u32);
        for (name, tensor) in &self.params {
            put_bytes(&mut buf, name.as_bytes());
            put_u32(&mut buf, tensor.rows() as u32);
            put_u32(&mut buf, tensor.cols() as u32);
            for v in tensor.data() {
                put_f64(&mut buf, *v);
            }
        }
        put_u64(&mut buf, self.adam_t);
        for moments in [&self.adam_m, &self.adam_v] {
            for (per_param, (_, tensor)) in moments.iter().zip(&self.params) {
                if per_param.len() != tensor.len() {
                    return Err(CliError::checkpoint("moment length mismatch on save"));
                }
                for v in per_param {
                    put_f64(&mut buf, *v);
                }
            }
        }
        put_u32(&mut buf, self.codebook_vectors.rows() as u32);
        put_u32(&mut buf, self.codebook_vectors.cols() as u32);
        for v in self.codebook_vectors.data() {
            put_f64(&mut buf, *v);
        }
        for s in &self.codebook_last_used {
            put_u64(&mut buf, *s);
        }
        put_f64(&mut buf, self.codebook_ema_rate);
        put_u64(&mut buf, self.codebook_timeout);

        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| CliError::io(parent.display().to_string(), e))?;
            }
        }
        let mut file = std::fs::File::create(path)
            .map_err(|e| CliError::io(path.display().to_string(), e))?;
        file.write_all(&buf)
            .map_err(|e| CliError::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| CliError::io(path.display().to_string(), e))?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(CliError::checkpoint("bad magic; not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let config_hash = r.u64()?;
        let step = r.u64()?;
        let config_text = String::from_utf8(r.bytes_field()?.to_vec())
            .map_err(|_| CliError::checkpoint("config text is not utf-8"))?;
        let n_params = r.u32()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = String::from_utf8(r.bytes_field()?.to_vec())
                .map_err(|_| CliError::checkpoint("parameter name is not utf-8"))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let data = r.f64s(rows * cols)?;
            params.push((
                name,
                Tensor64::from_vec(rows, cols, data)
                    .map_err(|e| CliError::checkpoint(e.to_string()))?,
            ));
        }
        let adam_t = r.u64()?;
        let mut adam_m = Vec::with_capacity(n_params);
        for (_, t) in &params {
            adam_m.push(r.f64s(t.len())?);
        }
        let mut adam_v = Vec::with_capacity(n_params);
        for (_, t) in &params {
            adam_v.push(r.f64s(t.len())?);
        }
        let cb_rows = r.u32()? as usize;
        let cb_cols = r.u32()? as usize;
        let codebook_vectors = Tensor64::from_vec(cb_rows, cb_cols, r.f64s(cb_rows * cb_cols)?)
            .map_err(|e| CliError::checkpoint(e.to_string()))?;
        let mut codebook_last_used = Vec::with_capacity(cb_rows);
        for _ in 0..cb_rows {
            codebook_last_used.push(r.u64()?);
        }
        let codebook_ema_rate = r.f64()?;
        let codebook_timeout = r.u64()?;
        if r.pos != bytes.len() {
            return Err(CliError::checkpoint("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint {
            config_text,
            config_hash,
            step,
            params,
            adam_m,
            adam_v,
            adam_t,
            codebook_vectors,
            codebook_last_used,
            codebook_ema_rate,
            codebook_timeout,
        })
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    put_u64(buf, b.len() as u64);
    buf.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CliError::checkpoint("truncated checkpoint"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
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

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn bytes_field(&mut self) -> Result<&'a [u8]> {
        let len = self.u64()? as usize;
        self.take(len)
    }
}
