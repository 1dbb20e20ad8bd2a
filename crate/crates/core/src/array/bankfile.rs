//! `.ufeb` beamformer bank files.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic        4 bytes  "UFEB"
//! version      u32      1
//! geom_hash    32 bytes SHA-256 of the geometry (see ArrayGeometry::hash)
//! design       u8       0 = delay_and_sum, 1 = superdirective
//! loading      f64
//! fft_size     u32
//! sample_rate  u32
//! mics         u32      M
//! c            f64      speed of sound
//! positions    M x 3 f64
//! beams        u32      N_b
//! centers      N_b f64  degrees
//! weights      N_b x (fft_size/2+1) x M x (re f64, im f64)
//! ```

use std::path::Path;

use super::{ArrayGeometry, BeamformerBank, BeamformerDesign};
use crate::dsp::C64;
use crate::error::{Error, Result};

pub const BANK_MAGIC: &[u8; 4] = b"UFEB";
pub const BANK_VERSION: u32 = 1;

pub fn encode_bank(bank: &BeamformerBank) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BANK_MAGIC);
    out.extend_from_slice(&BANK_VERSION.to_le_bytes());
    out.extend_from_slice(&bank.geometry.hash());
    out.push(bank.design.code());
    out.extend_from_slice(&bank.diagonal_loading.to_le_bytes());
    out.extend_from_slice(&(bank.fft_size as u32).to_le_bytes());
    out.extend_from_slice(&bank.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(bank.mics() as u32).to_le_bytes());
    out.extend_from_slice(&bank.geometry.speed_of_sound.to_le_bytes());
    for p in &bank.geometry.mics {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(bank.num_beams() as u32).to_le_bytes());
    for a in &bank.center_angles_deg {
        out.extend_from_slice(&a.to_le_bytes());
    }
    for z in &bank.w {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "bank file truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_bank(bytes: &[u8]) -> Result<BeamformerBank> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != BANK_MAGIC {
        return Err(Error::Format("not a beamformer bank (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != BANK_VERSION {
        return Err(Error::Format(format!("unsupported bank version {version}")));
    }
    let mut hash = [0u8; 32];
    hash.copy_from_slice(c.take(32)?);
    let design_code = c.take(1)?[0];
    let design = BeamformerDesign::from_code(design_code)
        .ok_or_else(|| Error::Format(format!("unknown design code {design_code}")))?;
    let diagonal_loading = c.f64()?;
    let fft_size = c.u32()? as usize;
    let sample_rate_hz = c.u32()?;
    let m = c.u32()? as usize;
    let speed = c.f64()?;
    let mut mics = Vec::with_capacity(m);
    for _ in 0..m {
        mics.push([c.f64()?, c.f64()?, c.f64()?]);
    }
    let geometry = ArrayGeometry::new(mics, speed)?;
    if geometry.hash() != hash {
        return Err(Error::Format("geometry hash does not match stored positions".into()));
    }
    let beams = c.u32()? as usize;
    let centers = (0..beams).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let n = beams * (fft_size / 2 + 1) * m;
    let mut w = Vec::with_capacity(n);
    for _ in 0..n {
        w.push(C64::new(c.f64()?, c.f64()?));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after bank payload",
            bytes.len() - c.pos
        )));
    }
    Ok(BeamformerBank {
        w,
        center_angles_deg: centers,
        design,
        diagonal_loading,
        fft_size,
        sample_rate_hz,
        geometry,
    })
}

pub fn write_bank(bank: &BeamformerBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_bank(bank)).map_err(|e| Error::io(path, e))
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<BeamformerBank> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bank(&bytes)
}
