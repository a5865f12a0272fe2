//! Binary utterance files.
//!
//! Header (little-endian): magic `MFCU`, version `u16`, frames `u32`, bins `u16`,
//! vocab `u16`, speaker id `u32`, style class `u16`. Then row-major `f64` mel,
//! `f64` lf0, `f64` energy, and `ceil(frames / 4)` content tokens as `u16`.

use std::path::Path;

use super::{Utterance, BINS, FRAMES_PER_TOKEN, VOCAB};
use crate::{Error, Result, Tensor};

const MAGIC: &[u8; 4] = b"MFCU";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_utterance(u: &Utterance) -> Vec<u8> {
    let t = u.frames();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t * (BINS + 2) + 2 * u.content.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(BINS as u16).to_le_bytes());
    out.extend_from_slice(&(VOCAB as u16).to_le_bytes());
    out.extend_from_slice(&u.speaker_id.to_le_bytes());
    out.extend_from_slice(&u.style_class.to_le_bytes());
    for v in u.mel.data().iter().chain(&u.lf0).chain(&u.energy) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in &u.content {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Decode {
            path: self.path.to_path_buf(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| self.err(format!("unexpected end of file, needed {n} bytes")))?;
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_utterance(bytes: &[u8], path: &Path) -> Result<Utterance> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return Err(r.err("missing MFCU magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let frames = r.u32()? as usize;
    let bins = r.u16()? as usize;
    let vocab = r.u16()? as usize;
    if bins != BINS || vocab != VOCAB || frames == 0 {
        return Err(r.err(format!(
            "unexpected dimensions: frames {frames}, bins {bins}, vocab {vocab}"
        )));
    }
    let speaker_id = r.u32()?;
    let style_class = r.u16()?;
    let mel = r.f64s(frames * bins)?;
    let lf0 = r.f64s(frames)?;
    let energy = r.f64s(frames)?;
    let n_tokens = frames.div_ceil(FRAMES_PER_TOKEN);
    let mut content = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        content.push(r.u16()?);
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after content tokens"));
    }
    let u = Utterance {
        mel: Tensor::matrix(frames, bins, mel)?,
        lf0,
        energy,
        content,
        speaker_id,
        style_class,
    };
    u.check().map_err(|e| r.err(e.to_string()))?;
    Ok(u)
}

pub fn save_utterance(u: &Utterance, path: &Path) -> Result<()> {
    std::fs::write(path, encode_utterance(u)).map_err(|e| Error::io(path, e))
}

pub fn load_utterance(path: &Path) -> Result<Utterance> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_utterance(&bytes, path)
}
