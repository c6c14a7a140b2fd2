//! Checkpoint files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "CDMICKPT"
//! version    u32      1
//! config     u32 x 7  vocab_size, embed_dim, n_layers, n_heads, ffn_dim,
//!                     max_seq_len, coord_buckets
//!            u8 x 2   layout_enabled, visual_enabled
//! task       u32      0 = MLM, 1 = EE_BIO, 2 = EE_SPADE
//! epoch      u32
//! metrics    f64 x 3  val_loss, val_accuracy, train_loss
//! tensors    u32      count, then per tensor:
//!            u32 name length, name bytes (utf-8),
//!            u32 rank, u32 x rank dims, f32 x prod(dims) values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::config::{Criterion, EncoderConfig, TaskKind};
use super::params::{Params, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CDMICKPT";
pub const OPTIMIZER_MAGIC: &[u8; 8] = b"CDMIOPTS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub task: TaskKind,
    pub params: Params<f32>,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub train_loss: f64,
}

impl Checkpoint {
    pub fn config(&self) -> &EncoderConfig {
        &self.params.config
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let c = &self.params.config;
        for v in [
            c.vocab_size,
            c.embed_dim,
            c.n_layers,
            c.n_heads,
            c.ffn_dim,
            c.max_seq_len,
            c.coord_buckets,
        ] {
            put_u32(&mut out, v as u32);
        }
        out.push(c.layout_enabled as u8);
        out.push(c.visual_enabled as u8);
        put_u32(&mut out, self.task.code());
        put_u32(&mut out, self.epoch as u32);
        for m in [self.val_loss, self.val_accuracy, self.train_loss] {
            out.extend_from_slice(&m.to_le_bytes());
        }
        write_tensors(&mut out, &self.params.tensors);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        r.magic(CHECKPOINT_MAGIC)?;
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let layout_enabled = r.u8()? != 0;
        let visual_enabled = r.u8()? != 0;
        let config = EncoderConfig {
            vocab_size: dims[0],
            embed_dim: dims[1],
            n_layers: dims[2],
            n_heads: dims[3],
            ffn_dim: dims[4],
            max_seq_len: dims[5],
            coord_buckets: dims[6],
            layout_enabled,
            visual_enabled,
        };
        config.validate()?;
        let task_code = r.u32()?;
        let task = TaskKind::from_code(task_code)
            .ok_or_else(|| Error::Format(format!("unknown task code {task_code}")))?;
        let epoch = r.u32()? as usize;
        let val_loss = r.f64()?;
        let val_accuracy = r.f64()?;
        let train_loss = r.f64()?;
        let tensors = read_tensors(&mut r)?;
        let params = Params { config, tensors };
        check_layout(&params)?;
        Ok(Self {
            epoch,
            task,
            params,
            val_loss,
            val_accuracy,
            train_loss,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Adam moments and step count, saved next to each checkpoint so training
/// can resume bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Params<f32>,
    pub v: Params<f32>,
}

impl OptimizerState {
    pub fn new(params: &Params<f32>) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(OPTIMIZER_MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        out.extend_from_slice(&self.step.to_le_bytes());
        write_tensors(&mut out, &self.m.tensors);
        write_tensors(&mut out, &self.v.tensors);
        out
    }

    pub fn from_bytes(bytes: &[u8], config: &EncoderConfig) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        r.magic(OPTIMIZER_MAGIC)?;
        let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let m = Params {
            config: *config,
            tensors: read_tensors(&mut r)?,
        };
        let v = Params {
            config: *config,
            tensors: read_tensors(&mut r)?,
        };
        check_layout(&m)?;
        check_layout(&v)?;
        Ok(Self { step, m, v })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path, config: &EncoderConfig) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, config)
    }
}

fn check_layout(p: &Params<f32>) -> Result<()> {
    let want = Params::<f32>::zeros(&p.config);
    if want.tensors.len() != p.tensors.len()
        || want
            .tensors
            .iter()
            .zip(&p.tensors)
            .any(|(a, b)| a.name != b.name || a.shape != b.shape)
    {
        return Err(Error::Format(
            "tensor names/shapes do not match the encoder config".into(),
        ));
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_tensors(out: &mut Vec<u8>, tensors: &[Tensor<f32>]) {
    put_u32(out, tensors.len() as u32);
    for t in tensors {
        put_u32(out, t.name.len() as u32);
        out.extend_from_slice(t.name.as_bytes());
        put_u32(out, t.shape.len() as u32);
        for &d in &t.shape {
            put_u32(out, d as u32);
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::Format("bad magic".into()));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}"
            )));
        }
        Ok(())
    }
}

fn read_tensors(r: &mut Reader) -> Result<Vec<Tensor<f32>>> {
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = r.take(
            count
                .checked_mul(4)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(Tensor { name, shape, data });
    }
    Ok(out)
}

/// Picks the attacked epoch: highest validation accuracy (Precision) or
/// lowest validation loss (Loss); ties go to the earliest epoch.
pub fn select_checkpoint(checkpoints: &[Checkpoint], criterion: Criterion) -> Result<&Checkpoint> {
    let mut best: Option<&Checkpoint> = None;
    for c in checkpoints {
        let better = match best {
            None => true,
            Some(b) => match criterion {
                Criterion::Precision => c.val_accuracy > b.val_accuracy,
                Criterion::Loss => c.val_loss < b.val_loss,
            },
        };
        if better {
            best = Some(c);
        }
    }
    best.ok_or_else(|| Error::Data("no checkpoints to select from".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(epoch: usize, loss: f64, acc: f64) -> Checkpoint {
        let config = EncoderConfig {
            vocab_size: 32,
            embed_dim: 8,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 16,
            max_seq_len: 16,
            coord_buckets: 4,
            ..EncoderConfig::default()
        };
        Checkpoint {
            epoch,
            task: TaskKind::EeSpade,
            params: Params::init(&config, epoch as u64),
            val_loss: loss,
            val_accuracy: acc,
            train_loss: 0.5,
        }
    }

    #[test]
    fn selection_rules() {
        let cs = vec![ckpt(1, 0.5, 0.1), ckpt(2, 0.4, 0.9), ckpt(3, 0.3, 0.5)];
        assert_eq!(
            select_checkpoint(&cs, Criterion::Precision).unwrap().epoch,
            2
        );
        assert_eq!(select_checkpoint(&cs, Criterion::Loss).unwrap().epoch, 3);
        let ties = vec![ckpt(1, 0.3, 0.2), ckpt(2, 0.2, 0.2), ckpt(3, 0.2, 0.1)];
        assert_eq!(select_checkpoint(&ties, Criterion::Loss).unwrap().epoch, 2);
        assert_eq!(
            select_checkpoint(&ties, Criterion::Precision)
                .unwrap()
                .epoch,
            1
        );
        let one = vec![ckpt(7, 1.0, 0.0)];
        assert_eq!(select_checkpoint(&one, Criterion::Loss).unwrap().epoch, 7);
        assert_eq!(
            select_checkpoint(&one, Criterion::Precision).unwrap().epoch,
            7
        );
        assert!(select_checkpoint(&[], Criterion::Loss).is_err());
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let c = ckpt(4, 0.123456789, 0.987654321);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        c.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), c.to_bytes());
        let bits: Vec<u32> = back.params.tensors[0]
            .data
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let want: Vec<u32> = c.params.tensors[0]
            .data
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(bits, want);
    }

    #[test]
    fn corrupt_files_rejected() {
        let c = ckpt(1, 0.0, 0.0);
        let mut bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn optimizer_state_round_trip() {
        let c = ckpt(1, 0.0, 0.0);
        let mut s = OptimizerState::new(&c.params);
        s.step = 42;
        s.m.tensors[0].data[0] = 1.5;
        let back = OptimizerState::from_bytes(&s.to_bytes(), &c.params.config).unwrap();
        assert_eq!(back, s);
    }
}
