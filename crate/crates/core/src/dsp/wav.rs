//! RIFF/WAVE reading and writing for 16-bit PCM and 32-bit float audio.

use std::fs;
use std::path::Path;

use super::MultiChannelWave;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::WavParse {
                offset: self.pos as u64,
                msg: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub fn decode_wav(bytes: &[u8]) -> Result<MultiChannelWave> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "RIFF id")? != b"RIFF" {
        return Err(Error::WavParse {
            offset: 0,
            msg: "missing RIFF signature".into(),
        });
    }
    r.u32("RIFF size")?;
    if r.take(4, "WAVE id")? != b"WAVE" {
        return Err(Error::WavParse {
            offset: 8,
            msg: "missing WAVE signature".into(),
        });
    }
    let mut fmt: Option<Format> = None;
    loop {
        let chunk_at = r.pos;
        let id = r.take(4, "chunk id")?;
        let size = r.u32("chunk size")? as usize;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::WavParse {
                        offset: chunk_at as u64,
                        msg: format!("fmt chunk too small ({size} bytes)"),
                    });
                }
                let body_at = r.pos;
                let mut tag = r.u16("format tag")?;
                let channels = r.u16("channel count")?;
                let sample_rate = r.u32("sample rate")?;
                r.u32("byte rate")?;
                r.u16("block align")?;
                let bits = r.u16("bits per sample")?;
                if tag == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(Error::WavParse {
                            offset: chunk_at as u64,
                            msg: "extensible fmt chunk too small".into(),
                        });
                    }
                    r.take(8, "extension header")?;
                    tag = r.u16("sub-format")?;
                }
                r.pos = body_at;
                r.take(size + size % 2, "fmt chunk")?;
                if channels == 0 {
                    return Err(Error::WavParse {
                        offset: (body_at + 2) as u64,
                        msg: "zero channels".into(),
                    });
                }
                fmt = Some(Format {
                    tag,
                    channels,
                    sample_rate,
                    bits,
                });
            }
            b"data" => {
                let f = fmt.as_ref().ok_or_else(|| Error::WavParse {
                    offset: chunk_at as u64,
                    msg: "data chunk before fmt chunk".into(),
                })?;
                let data = r.take(size, "data chunk")?;
                return decode_samples(f, data);
            }
            _ => {
                r.take(size + size % 2, "chunk body")?;
            }
        }
    }
}

fn decode_samples(f: &Format, data: &[u8]) -> Result<MultiChannelWave> {
    let m = f.channels as usize;
    let width = match (f.tag, f.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_FLOAT, 32) => 4,
        (tag, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "format tag {tag} with {bits} bits per sample (expected 16-bit PCM or 32-bit float)"
            )))
        }
    };
    let frames = data.len() / (width * m);
    let mut out = vec![Vec::with_capacity(frames); m];
    for frame in data.chunks_exact(width * m) {
        for (c, s) in frame.chunks_exact(width).enumerate() {
            let v = if width == 2 {
                i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0
            } else {
                f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64
            };
            out[c].push(v);
        }
    }
    MultiChannelWave::new(out, f.sample_rate)
}

pub fn encode_wav(wave: &MultiChannelWave, format: SampleFormat) -> Vec<u8> {
    let m = wave.channels();
    let (tag, width) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 2usize),
        SampleFormat::Float32 => (FORMAT_FLOAT, 4usize),
    };
    let data_len = wave.len() * m * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&(m as u16).to_le_bytes());
    out.extend_from_slice(&wave.sample_rate_hz().to_le_bytes());
    out.extend_from_slice(&((wave.sample_rate_hz() as usize * m * width) as u32).to_le_bytes());
    out.extend_from_slice(&((m * width) as u16).to_le_bytes());
    out.extend_from_slice(&((width * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..wave.len() {
        for c in 0..m {
            let v = wave.channel(c)[i];
            match format {
                SampleFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                SampleFormat::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultiChannelWave> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

pub fn write_wav(wave: &MultiChannelWave, path: impl AsRef<Path>, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(wave, format)).map_err(|e| Error::io(path, e))
}
