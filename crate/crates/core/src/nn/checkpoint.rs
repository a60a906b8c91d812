//! Binary checkpoints: an 8-byte header (`ADAABC` + little-endian `u16` version),
//! a kind byte, then little-endian payload. Floats are stored as raw IEEE-754 bits.

use std::io::{Read, Write};

use super::layer::{Activation, DenseLayer};
use super::{Matrix, Mlp};
use crate::{Error, Result};

pub const MAGIC: &[u8; 6] = b"ADAABC";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Mlp = 0,
    Council = 1,
}

pub(crate) fn write_header<W: Write>(w: &mut W, kind: Kind) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[kind as u8])?;
    Ok(())
}

pub(crate) fn read_header<R: Read>(r: &mut R, expected: Kind) -> Result<()> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if &head[..6] != MAGIC {
        return Err(Error::Checkpoint("missing magic bytes".into()));
    }
    let version = u16::from_le_bytes([head[6], head[7]]);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let kind = read_u8(r)?;
    if kind != expected as u8 {
        return Err(Error::Checkpoint(format!(
            "checkpoint kind {kind} where {} was expected",
            expected as u8
        )));
    }
    Ok(())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_bits().to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Network body without header: layer count, then per layer `in, out, activation,
/// weights, bias`.
pub(crate) fn write_mlp_body<W: Write>(w: &mut W, model: &Mlp) -> Result<()> {
    write_u32(w, model.layers().len() as u32)?;
    for layer in model.layers() {
        write_u32(w, layer.input_dim() as u32)?;
        write_u32(w, layer.output_dim() as u32)?;
        w.write_all(&[layer.activation().code()])?;
        for &v in layer.weights().as_slice() {
            write_f64(w, v)?;
        }
        for &v in layer.bias() {
            write_f64(w, v)?;
        }
    }
    Ok(())
}

pub(crate) fn read_mlp_body<R: Read>(r: &mut R) -> Result<Mlp> {
    let n_layers = read_u32(r)? as usize;
    if n_layers == 0 {
        return Err(Error::Checkpoint("network with zero layers".into()));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let input = read_u32(r)? as usize;
        let output = read_u32(r)? as usize;
        let activation = Activation::from_code(read_u8(r)?)
            .ok_or_else(|| Error::Checkpoint("unknown activation code".into()))?;
        let weights = (0..input * output)
            .map(|_| read_f64(r))
            .collect::<Result<Vec<_>>>()?;
        let bias = (0..output).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        layers.push(DenseLayer::new(
            Matrix::from_vec(output, input, weights)?,
            bias,
            activation,
        )?);
    }
    Mlp::new(layers)
}

impl Mlp {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, Kind::Mlp)?;
        write_mlp_body(&mut w, self)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        read_header(&mut r, Kind::Mlp)?;
        read_mlp_body(&mut r)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}
