//! Parameter checkpoint format.
//!
//! Header: magic "SEVA", version u32; body: layer count u32, then per layer
//! out u32, in u32, activation u8, row-major little-endian f64 weights, f64 biases.

use super::mat::Mat;
use super::net::{Activation, Layer, NetParams};
use crate::util::io::*;
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SEVA";
pub const VERSION: u32 = 1;

pub fn write_header<W: Write>(w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)
}

pub fn read_header<R: Read>(r: &mut R, context: &str) -> Result<()> {
    expect_magic(r, MAGIC, context)?;
    let v = read_u32(r)?;
    if v != VERSION {
        return Err(Error::format(context, format!("unsupported version {v}")));
    }
    Ok(())
}

/// Writes the layer block (without the file header).
pub fn write_params_body<W: Write>(w: &mut W, params: &NetParams) -> Result<()> {
    write_u32(w, params.n_layers() as u32)?;
    for layer in params.layers() {
        write_u32(w, layer.out_dim() as u32)?;
        write_u32(w, layer.in_dim() as u32)?;
        write_u8(w, layer.act.code())?;
        write_f64s(w, layer.w.data())?;
        write_f64s(w, &layer.b)?;
    }
    Ok(())
}

pub fn read_params_body<R: Read>(r: &mut R, context: &str) -> Result<NetParams> {
    let n_layers = read_u32(r)? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(Error::format(context, format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let out = read_u32(r)? as usize;
        let inp = read_u32(r)? as usize;
        let act = Activation::from_code(read_u8(r)?)?;
        let w = read_f64s(r, out * inp)?;
        let b = read_f64s(r, out)?;
        layers.push(Layer {
            w: Mat::from_flat(out, inp, w),
            b,
            act,
        });
    }
    NetParams::new(layers)
}

pub fn save_params(path: &Path, params: &NetParams) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut f)?;
    write_params_body(&mut f, params)
}

pub fn load_params(path: &Path) -> Result<NetParams> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let ctx = path.display().to_string();
    read_header(&mut f, &ctx)?;
    read_params_body(&mut f, &ctx)
}
