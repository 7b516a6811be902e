//! IDX binary tensors: two zero bytes, a dtype code, the number of
//! dimensions, big-endian u32 sizes, then the big-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DTYPE_U8: u8 = 0x08;
pub const DTYPE_F32: u8 = 0x0D;

#[derive(Clone, Debug, PartialEq)]
pub enum IdxPayload {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl IdxPayload {
    pub fn len(&self) -> usize {
        match self {
            IdxPayload::U8(v) => v.len(),
            IdxPayload::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxData {
    pub dims: Vec<usize>,
    pub payload: IdxPayload,
}

impl IdxData {
    pub fn new(dims: Vec<usize>, payload: IdxPayload) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != payload.len() || dims.is_empty() || dims.len() > 255 {
            return Err(Error::Format(format!("dims {dims:?} do not describe {} values", payload.len())));
        }
        Ok(Self { dims, payload })
    }

    /// Float tensor of the data; unsigned bytes are scaled by 1/255.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let data = match &self.payload {
            IdxPayload::U8(v) => v.iter().map(|&b| b as f64 / 255.0).collect(),
            IdxPayload::F32(v) => v.iter().map(|&x| x as f64).collect(),
        };
        Tensor::new(self.dims.clone(), data)
    }

    pub fn encode(&self) -> Vec<u8> {
        let code = match self.payload {
            IdxPayload::U8(_) => DTYPE_U8,
            IdxPayload::F32(_) => DTYPE_F32,
        };
        let mut out = vec![0, 0, code, self.dims.len() as u8];
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        match &self.payload {
            IdxPayload::U8(v) => out.extend_from_slice(v),
            IdxPayload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
            return Err(Error::Format("bad IDX magic".into()));
        }
        let width = match bytes[2] {
            DTYPE_U8 => 1,
            DTYPE_F32 => 4,
            other => return Err(Error::Format(format!("unsupported IDX dtype 0x{other:02X}"))),
        };
        let rank = bytes[3] as usize;
        let header = 4 + 4 * rank;
        if rank == 0 || bytes.len() < header {
            return Err(Error::Format(format!("IDX header needs {header} bytes, file has {}", bytes.len())));
        }
        let dims: Vec<usize> =
            (0..rank).map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize).collect();
        let expected = dims.iter().product::<usize>() * width;
        let body = &bytes[header..];
        if body.len() != expected {
            return Err(Error::Format(format!(
                "IDX payload for dims {dims:?} must be {expected} bytes, found {}",
                body.len()
            )));
        }
        let payload = if width == 1 {
            IdxPayload::U8(body.to_vec())
        } else {
            IdxPayload::F32(body.chunks_exact(4).map(|c| f32::from_be_bytes(c.try_into().expect("4 bytes"))).collect())
        };
        Ok(Self { dims, payload })
    }
}

pub fn read_idx(path: &Path) -> Result<IdxData> {
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    IdxData::decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_idx(data: &IdxData, path: &Path) -> Result<()> {
    fs::write(path, data.encode())?;
    Ok(())
}
