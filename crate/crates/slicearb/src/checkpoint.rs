//! Binary parameter checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic    8 bytes  "SLARBCKP"
//! version  u32      1
//! kind     u8       0 = attention network, 1 = all-to-all baseline
//! shape    4 x u32  inputs, hidden, heads, actions
//! count    u32      number of tensors
//! tensor   u32 name length, UTF-8 name, u32 rows, u32 cols, rows*cols f64
//! ```
//!
//! Tensors are written in [`Parameterized::tensors`] order and must match
//! it on load, so a file only loads into the architecture that wrote it.

use std::io::{Read, Write};

use slicearb_core::nn::{DgnNetwork, NetShape, Parameterized};
use slicearb_core::trainer::CoopNetwork;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SLARBCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Attention,
    Baseline,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Attention => "attention network (gcn)",
            ModelKind::Baseline => "all-to-all baseline (coop)",
        })
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("checkpoint holds the {found}, expected the {expected}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("unknown model kind byte {0}")]
    UnknownKind(u8),
    #[error("invalid shape in header: {0}")]
    Shape(#[from] slicearb_core::nn::NnError),
    #[error("tensor {index}: expected `{expected}` {rows}x{cols}, found `{found}` {found_rows}x{found_cols}")]
    TensorMismatch {
        index: usize,
        expected: String,
        rows: usize,
        cols: usize,
        found: String,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("expected {expected} tensors, file has {found}")]
    TensorCount { expected: usize, found: usize },
    #[error("checkpoint is truncated or unreadable: {0}")]
    Io(#[from] std::io::Error),
}

/// A network that can be stored in a checkpoint.
pub trait Checkpointable: Parameterized + Sized {
    const KIND: ModelKind;
    fn shape(&self) -> NetShape;
    fn zeros_for(shape: NetShape) -> Result<Self, CheckpointError>;
}

impl Checkpointable for DgnNetwork {
    const KIND: ModelKind = ModelKind::Attention;

    fn shape(&self) -> NetShape {
        DgnNetwork::shape(self)
    }

    fn zeros_for(shape: NetShape) -> Result<Self, CheckpointError> {
        Ok(DgnNetwork::zeros(shape)?)
    }
}

impl Checkpointable for CoopNetwork {
    const KIND: ModelKind = ModelKind::Baseline;

    fn shape(&self) -> NetShape {
        CoopNetwork::shape(self)
    }

    fn zeros_for(shape: NetShape) -> Result<Self, CheckpointError> {
        Ok(CoopNetwork::zeros(shape))
    }
}

fn kind_byte(k: ModelKind) -> u8 {
    match k {
        ModelKind::Attention => 0,
        ModelKind::Baseline => 1,
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v =
        u32::try_from(v).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> std::io::Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_checkpoint<M: Checkpointable, W: Write>(net: &M, mut w: W) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[kind_byte(M::KIND)])?;
    let s = net.shape();
    for v in [s.inputs, s.hidden, s.heads, s.actions] {
        put_u32(&mut w, v)?;
    }
    let tensors = net.tensors();
    put_u32(&mut w, tensors.len())?;
    for (name, m) in tensors {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, m.rows)?;
        put_u32(&mut w, m.cols)?;
        for x in &m.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the model kind without consuming the rest of the file.
pub fn peek_kind(bytes: &[u8]) -> Result<ModelKind, CheckpointError> {
    let mut r = bytes;
    read_header(&mut r).map(|(k, _)| k)
}

fn read_header<R: Read>(r: &mut R) -> Result<(ModelKind, NetShape), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = get_u32(r)? as u32;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut kind = [0u8];
    r.read_exact(&mut kind)?;
    let kind = match kind[0] {
        0 => ModelKind::Attention,
        1 => ModelKind::Baseline,
        b => return Err(CheckpointError::UnknownKind(b)),
    };
    let shape = NetShape { inputs: get_u32(r)?, hidden: get_u32(r)?, heads: get_u32(r)?, actions: get_u32(r)? };
    Ok((kind, shape))
}

pub fn read_checkpoint<M: Checkpointable, R: Read>(mut r: R) -> Result<M, CheckpointError> {
    let (kind, shape) = read_header(&mut r)?;
    if kind != M::KIND {
        return Err(CheckpointError::WrongKind { expected: M::KIND, found: kind });
    }
    let mut net = M::zeros_for(shape)?;
    let expected: Vec<(String, usize, usize)> = net.tensors().into_iter().map(|(n, m)| (n, m.rows, m.cols)).collect();
    let count = get_u32(&mut r)?;
    if count != expected.len() {
        return Err(CheckpointError::TensorCount { expected: expected.len(), found: count });
    }
    for (index, (dst, (name, rows, cols))) in net.tensors_mut().into_iter().zip(expected).enumerate() {
        let len = get_u32(&mut r)?;
        let mut raw = vec![0u8; len];
        r.read_exact(&mut raw)?;
        let found = String::from_utf8_lossy(&raw).into_owned();
        let (found_rows, found_cols) = (get_u32(&mut r)?, get_u32(&mut r)?);
        if found != name || (found_rows, found_cols) != (rows, cols) {
            return Err(CheckpointError::TensorMismatch {
                index,
                expected: name,
                rows,
                cols,
                found,
                found_rows,
                found_cols,
            });
        }
        let mut b = [0u8; 8];
        for x in dst.data.iter_mut() {
            r.read_exact(&mut b)?;
            *x = f64::from_le_bytes(b);
        }
    }
    Ok(net)
}
