//! SEVF feature archive: magic "SEVF", version, utterance count; per utterance
//! a length-prefixed id, T, D, and row-major little-endian f32 frames.

use crate::netcore::Mat;
use crate::util::io::*;
use crate::{Error, Result};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SEVF";
pub const VERSION: u32 = 1;

pub fn write_archive(path: &Path, entries: &[(String, Mat)]) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    write_u32(&mut f, VERSION)?;
    write_u32(&mut f, entries.len() as u32)?;
    for (id, feats) in entries {
        write_str(&mut f, id)?;
        write_u32(&mut f, feats.rows() as u32)?;
        write_u32(&mut f, feats.cols() as u32)?;
        let row32: Vec<f32> = feats.data().iter().map(|&x| x as f32).collect();
        write_f32s(&mut f, &row32)?;
    }
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<Vec<(String, Mat)>> {
    let ctx = path.display().to_string();
    let mut f = BufReader::new(std::fs::File::open(path)?);
    expect_magic(&mut f, MAGIC, &ctx)?;
    let v = read_u32(&mut f)?;
    if v != VERSION {
        return Err(Error::format(&ctx, format!("unsupported version {v}")));
    }
    let count = read_u32(&mut f)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id = read_str(&mut f, &ctx)?;
        let t = read_u32(&mut f)? as usize;
        let d = read_u32(&mut f)? as usize;
        let data = read_f32s(&mut f, t * d)?;
        out.push((id, Mat::from_flat(t, d, data.iter().map(|&x| x as f64).collect())));
    }
    let mut rest = [0u8; 1];
    if f.read(&mut rest)? != 0 {
        return Err(Error::format(&ctx, "trailing bytes after last utterance"));
    }
    Ok(out)
}
