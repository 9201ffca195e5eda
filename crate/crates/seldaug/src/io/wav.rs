//! Minimal RIFF/WAVE reader and writer.
//!
//! Reads PCM 16-bit, PCM 24-bit, and IEEE float32; writes float32 only.
//! Samples are exposed as `f64` per channel, with integer formats scaled to
//! [-1, 1).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};

pub const MAX_CHANNELS: usize = 64;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone)]
pub struct WavData {
    /// One sample vector per channel, equal lengths.
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl WavData {
    pub fn frames(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }
}

struct Cursor<'a, R: Read + Seek> {
    inner: &'a mut R,
    path: &'a Path,
    offset: u64,
}

impl<'a, R: Read + Seek> Cursor<'a, R> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Wav {
            path: self.path.to_path_buf(),
            offset: self.offset,
            msg: msg.into(),
        }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| self.fail(format!("unexpected end of file ({e})")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_tag(&mut self) -> Result<[u8; 4]> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(b)
    }

    fn skip(&mut self, n: u64) -> Result<()> {
        self.inner
            .seek(SeekFrom::Current(n as i64))
            .map_err(|e| self.fail(format!("seek failed ({e})")))?;
        self.offset += n;
        Ok(())
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WavData> {
    let path = path.as_ref();
    let mut file = BufReader::new(File::open(path)?);
    let mut cur = Cursor {
        inner: &mut file,
        path,
        offset: 0,
    };

    if &cur.read_tag()? != b"RIFF" {
        return Err(cur.fail("missing RIFF tag"));
    }
    cur.read_u32()?;
    if &cur.read_tag()? != b"WAVE" {
        return Err(cur.fail("missing WAVE tag"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    loop {
        let tag = cur.read_tag()?;
        let size = cur.read_u32()? as u64;
        match &tag {
            b"fmt " => {
                if size < 16 {
                    return Err(cur.fail(format!("fmt chunk too small ({size} bytes)")));
                }
                let mut format = cur.read_u16()?;
                let channels = cur.read_u16()?;
                let sample_rate = cur.read_u32()?;
                cur.read_u32()?;
                cur.read_u16()?;
                let bits = cur.read_u16()?;
                let mut remaining = size - 16;
                if format == FORMAT_EXTENSIBLE {
                    if remaining < 10 {
                        return Err(cur.fail("extensible fmt chunk truncated"));
                    }
                    cur.read_u16()?;
                    cur.read_u16()?;
                    cur.read_u32()?;
                    format = cur.read_u16()?;
                    remaining -= 10;
                }
                cur.skip(remaining + (size & 1))?;
                fmt = Some((format, channels, sample_rate, bits));
            }
            b"data" => {
                let (format, channels, sample_rate, bits) =
                    fmt.ok_or_else(|| cur.fail("data chunk before fmt chunk"))?;
                return read_data(&mut cur, size, format, channels, sample_rate, bits);
            }
            _ => cur.skip(size + (size & 1))?,
        }
    }
}

fn read_data<R: Read + Seek>(
    cur: &mut Cursor<R>,
    size: u64,
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
) -> Result<WavData> {
    if channels == 0 || channels as usize > MAX_CHANNELS {
        return Err(cur.fail(format!("unsupported channel count {channels}")));
    }
    let bytes_per_sample = match (format, bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_PCM, 24) => 3,
        (FORMAT_FLOAT, 32) => 4,
        _ => {
            return Err(cur.fail(format!(
                "unsupported format (code {format}, {bits} bits)"
            )))
        }
    };
    let frame_bytes = bytes_per_sample * channels as u64;
    if size % frame_bytes != 0 {
        return Err(cur.fail(format!(
            "data size {size} not a multiple of frame size {frame_bytes}"
        )));
    }
    let frames = (size / frame_bytes) as usize;
    let mut out = vec![Vec::with_capacity(frames); channels as usize];
    let mut frame = vec![0u8; frame_bytes as usize];
    for _ in 0..frames {
        cur.read_exact(&mut frame)?;
        for (ch, samples) in out.iter_mut().enumerate() {
            let at = ch * bytes_per_sample as usize;
            let v = match (format, bits) {
                (FORMAT_PCM, 16) => {
                    i16::from_le_bytes([frame[at], frame[at + 1]]) as f64 / 32768.0
                }
                (FORMAT_PCM, 24) => {
                    let raw = i32::from_le_bytes([0, frame[at], frame[at + 1], frame[at + 2]])
                        >> 8;
                    raw as f64 / 8388608.0
                }
                _ => f32::from_le_bytes([
                    frame[at],
                    frame[at + 1],
                    frame[at + 2],
                    frame[at + 3],
                ]) as f64,
            };
            samples.push(v);
        }
    }
    Ok(WavData {
        channels: out,
        sample_rate,
    })
}

/// Write interleaved float32 WAV.
pub fn write_wav_f32(path: impl AsRef<Path>, data: &WavData) -> Result<()> {
    let path = path.as_ref();
    let channels = data.channel_count();
    if channels == 0 || channels > MAX_CHANNELS {
        return Err(Error::config(format!(
            "cannot write wav with {channels} channels"
        )));
    }
    let frames = data.frames();
    if data.channels.iter().any(|c| c.len() != frames) {
        return Err(Error::config("wav channels have unequal lengths"));
    }
    let data_bytes = (frames * channels * 4) as u32;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"RIFF")?;
    w.write_u32::<LittleEndian>(36 + data_bytes)?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_u32::<LittleEndian>(16)?;
    w.write_u16::<LittleEndian>(FORMAT_FLOAT)?;
    w.write_u16::<LittleEndian>(channels as u16)?;
    w.write_u32::<LittleEndian>(data.sample_rate)?;
    w.write_u32::<LittleEndian>(data.sample_rate * channels as u32 * 4)?;
    w.write_u16::<LittleEndian>(channels as u16 * 4)?;
    w.write_u16::<LittleEndian>(32)?;
    w.write_all(b"data")?;
    w.write_u32::<LittleEndian>(data_bytes)?;
    for i in 0..frames {
        for ch in &data.channels {
            w.write_f32::<LittleEndian>(ch[i] as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}
