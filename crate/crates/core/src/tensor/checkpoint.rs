//! Little-endian binary tensor checkpoints.
//!
//! ```text
//! "MASTCKPT"  u32 version  u32 meta_len  meta (UTF-8 key=value lines)
//! repeated until EOF:
//!   u32 name_len  name (UTF-8)  u32 rank  u64 extents[rank]  f64 values[numel]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MASTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    /// Free-form `key=value` header; empty for plain tensor files.
    pub metadata: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params(metadata: impl Into<String>, params: &ParamStore) -> Self {
        let tensors = params
            .iter()
            .map(|(n, t)| {
                let plain = Tensor::new(t.shape().to_vec(), t.data().to_vec())
                    .expect("parameter shapes are consistent");
                (n.to_string(), plain)
            })
            .collect();
        Self {
            metadata: metadata.into(),
            tensors,
        }
    }

    /// Copies stored values into `params`, requiring identical names and shapes.
    pub fn restore_into(&self, params: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (name, t) in &self.tensors {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name} in checkpoint")))?;
            let dst = params.get_mut(id);
            if dst.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn encode<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.metadata)?;
        for (name, t) in &self.tensors {
            write_str(&mut w, name)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn decode<R: Read>(mut r: R, origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(origin, msg);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a MASTCKPT file"));
        }
        let version = read_u32(&mut r).map_err(|_| bad("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let metadata = read_str(&mut r, origin)?;
        let mut tensors = Vec::new();
        loop {
            let mut len = [0u8; 4];
            match r.read_exact(&mut len) {
                Ok(()) => {}
                Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let name = read_utf8(&mut r, u32::from_le_bytes(len) as usize, origin)?;
            let rank = read_u32(&mut r).map_err(|_| bad("truncated record"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r).map_err(|_| bad("truncated record"))? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf).map_err(|_| bad("truncated values"))?;
                data.push(f64::from_le_bytes(buf));
            }
            let t = Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))?;
            tensors.push((name, t));
        }
        Ok(Self { metadata, tensors })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let f = File::create(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    ckpt.encode(BufWriter::new(f))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::decode(BufReader::new(f), path)
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R, origin: &Path) -> Result<String> {
    let len = read_u32(r).map_err(|_| Error::format(origin, "truncated string"))? as usize;
    read_utf8(r, len, origin)
}

fn read_utf8<R: Read>(r: &mut R, len: usize, origin: &Path) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(origin, "truncated string"))?;
    String::from_utf8(buf).map_err(|_| Error::format(origin, "invalid UTF-8"))
}
