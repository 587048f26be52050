//! Mono 16-bit PCM WAV read/write.

use super::Waveform;
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let n = w.samples.len();
    let data_bytes = (n * 2) as u32;
    let byte_rate = w.sample_rate * 2;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(b"RIFF")?;
    f.write_all(&(36 + data_bytes).to_le_bytes())?;
    f.write_all(b"WAVE")?;
    f.write_all(b"fmt ")?;
    f.write_all(&16u32.to_le_bytes())?;
    f.write_all(&1u16.to_le_bytes())?; // PCM
    f.write_all(&1u16.to_le_bytes())?; // mono
    f.write_all(&w.sample_rate.to_le_bytes())?;
    f.write_all(&byte_rate.to_le_bytes())?;
    f.write_all(&2u16.to_le_bytes())?; // block align
    f.write_all(&16u16.to_le_bytes())?; // bits
    f.write_all(b"data")?;
    f.write_all(&data_bytes.to_le_bytes())?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let ctx = path.display().to_string();
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut hdr = [0u8; 12];
    f.read_exact(&mut hdr)?;
    if &hdr[0..4] != b"RIFF" || &hdr[8..12] != b"WAVE" {
        return Err(Error::format(&ctx, "not a RIFF/WAVE file"));
    }
    let mut sample_rate = 0u32;
    let mut fmt_ok = false;
    loop {
        let mut chdr = [0u8; 8];
        if f.read_exact(&mut chdr).is_err() {
            return Err(Error::format(&ctx, "no data chunk"));
        }
        let size = u32::from_le_bytes(chdr[4..8].try_into().unwrap()) as usize;
        match &chdr[0..4] {
            b"fmt " => {
                let mut body = vec![0u8; size];
                f.read_exact(&mut body)?;
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 || channels != 1 || bits != 16 {
                    return Err(Error::format(
                        &ctx,
                        format!("need mono 16-bit PCM, got format={format} ch={channels} bits={bits}"),
                    ));
                }
                fmt_ok = true;
            }
            b"data" => {
                if !fmt_ok {
                    return Err(Error::format(&ctx, "data chunk before fmt"));
                }
                let mut body = vec![0u8; size];
                f.read_exact(&mut body)?;
                let samples = body
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes(c.try_into().unwrap()) as f64 / 32768.0)
                    .collect();
                return Waveform::new(samples, sample_rate);
            }
            _ => {
                // Skip unknown chunk (padded to even size).
                let skip = size + (size & 1);
                std::io::copy(&mut f.by_ref().take(skip as u64), &mut std::io::sink())?;
            }
        }
    }
}
