//! Binary checkpoint format.
//!
//! ```text
//! magic        b"MXP1"
//! version      u32
//! layer count  u32
//! dims         (inputs u32, outputs u32) per layer
//! input offset inputs f32
//! params       per layer: weights (inputs*outputs f32), bias (outputs f32)
//! accumulators same layout as params
//! global step  u64
//! ```
//!
//! All integers and floats are little-endian. Layers are the trunk in order,
//! then the policy head, then the value head.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::net::{NetParams, NetShape};

pub const MAGIC: &[u8; 4] = b"MXP1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams<f32>,
    pub accumulators: Vec<Vec<f32>>,
    pub global_step: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.params.shape.layer_dims();
        let mut out = Vec::with_capacity(20 + 8 * dims.len() + 4 * (self.params.shape.input + 2 * self.params.shape.num_params()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for (i, o) in dims {
            out.extend_from_slice(&(i as u32).to_le_bytes());
            out.extend_from_slice(&(o as u32).to_le_bytes());
        }
        put_floats(&mut out, &self.params.input_offset);
        for t in self.params.tensors() {
            put_floats(&mut out, t);
        }
        for t in &self.accumulators {
            put_floats(&mut out, t);
        }
        out.extend_from_slice(&self.global_step.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        if count < 2 {
            return Err(Error::Checkpoint(format!("{count} layers, need at least 2")));
        }
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            dims.push((r.u32()? as usize, r.u32()? as usize));
        }
        let shape = shape_from_dims(&dims)?;
        let mut params = NetParams::<f32>::zeros(&shape);
        r.floats(&mut params.input_offset)?;
        for t in params.tensors_mut() {
            r.floats(t)?;
        }
        let mut accumulators: Vec<Vec<f32>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        for t in &mut accumulators {
            r.floats(t)?;
        }
        let global_step = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            params,
            accumulators,
            global_step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn shape_from_dims(dims: &[(usize, usize)]) -> Result<NetShape> {
    let n = dims.len();
    let trunk: Vec<usize> = dims[..n - 2].iter().map(|&(_, o)| o).collect();
    let shape = NetShape::new(dims[0].0, trunk, dims[n - 2].1);
    if shape.layer_dims() != dims {
        return Err(Error::Checkpoint(format!("inconsistent layer dims {dims:?}")));
    }
    shape.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(shape)
}

fn put_floats(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn floats(&mut self, out: &mut [f32]) -> Result<()> {
        let raw = self.take(out.len() * 4)?;
        for (v, chunk) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let shape = NetShape::new(5, vec![4, 3], 4);
        let params = NetParams::<f32>::init(11, &shape).unwrap();
        let accumulators = params
            .tensors()
            .map(|t| t.iter().map(|v| v * v).collect())
            .collect();
        Checkpoint {
            params,
            accumulators,
            global_step: 12345,
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"MXP1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 5);
        assert_eq!(&bytes[bytes.len() - 8..], &12345u64.to_le_bytes());
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
