//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `OCKP`, u32 version, u64 entry count, then
//! per entry a u32 name length, UTF-8 name, u32 rank and u64 dims. The f64
//! buffers follow in manifest order. An optional Adam block (`ADAM`, step,
//! hyperparameters, then m and v in manifest order) closes the file.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AdamState, AutodiffError, ParamMap, Tensor};

const MAGIC: &[u8; 4] = b"OCKP";
const ADAM_MAGIC: &[u8; 4] = b"ADAM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamMap,
    pub adam: Option<AdamState>,
}

fn bad(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

pub fn write_checkpoint(
    w: &mut impl Write,
    params: &ParamMap,
    adam: Option<&AdamState>,
) -> Result<(), AutodiffError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, t) in params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    let push_all = |buf: &mut Vec<u8>, t: &Tensor| {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    for t in params.values() {
        push_all(&mut buf, t);
    }
    if let Some(st) = adam {
        buf.extend_from_slice(ADAM_MAGIC);
        buf.extend_from_slice(&st.t.to_le_bytes());
        for h in [st.lr, st.beta1, st.beta2, st.eps] {
            buf.extend_from_slice(&h.to_le_bytes());
        }
        for moments in [&st.m, &st.v] {
            for name in params.keys() {
                let t = moments
                    .get(name)
                    .ok_or_else(|| bad(format!("Adam state lacks {name}")))?;
                push_all(&mut buf, t);
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        if self.pos + n > self.bytes.len() {
            return Err(bad("truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, AutodiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, AutodiffError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint, AutodiffError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(4)? != MAGIC {
        return Err(bad("wrong magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = c.u64()? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| bad("parameter name is not UTF-8"))?
            .to_owned();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        manifest.push((name, shape));
    }
    let mut params = ParamMap::new();
    for (name, shape) in &manifest {
        let len = shape.iter().product();
        let t = Tensor::new(shape.clone(), c.f64s(len)?)?;
        if params.insert(name.clone(), t).is_some() {
            return Err(bad(format!("duplicate parameter {name}")));
        }
    }
    let adam = if c.pos == bytes.len() {
        None
    } else {
        if c.take(4)? != ADAM_MAGIC {
            return Err(bad("trailing bytes after parameters"));
        }
        let t = c.u64()?;
        let h = c.f64s(4)?;
        let mut moments = [ParamMap::new(), ParamMap::new()];
        for slot in moments.iter_mut() {
            for (name, shape) in &manifest {
                let len = shape.iter().product();
                slot.insert(name.clone(), Tensor::new(shape.clone(), c.f64s(len)?)?);
            }
        }
        let [m, v] = moments;
        Some(AdamState {
            m,
            v,
            t,
            lr: h[0],
            beta1: h[1],
            beta2: h[2],
            eps: h[3],
        })
    };
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint { params, adam })
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint(
    path: &Path,
    params: &ParamMap,
    adam: Option<&AdamState>,
) -> Result<(), AutodiffError> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write_checkpoint(&mut w, params, adam)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, AutodiffError> {
    read_checkpoint(&mut BufReader::new(fs::File::open(path)?))
}
