//! Binary mel cache: `u32` id length, id bytes, `u32` frames, `u32` channels
//! (80), then frames×80 little-endian `f32` values, row-major.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use phrasenet_core::spectral::{MelSpectrogram, N_MELS};

pub const CACHE_EXT: &str = "mel";

pub fn cache_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{CACHE_EXT}"))
}

pub fn encode(id: &str, mel: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + id.len() + mel.data.len() * 4);
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    out.extend_from_slice(&(mel.frames as u32).to_le_bytes());
    out.extend_from_slice(&(N_MELS as u32).to_le_bytes());
    for &v in &mel.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let Some(b) = bytes.get(*pos..*pos + 4) else {
        bail!("truncated mel cache header at byte {pos}")
    };
    *pos += 4;
    Ok(u32::from_le_bytes(b.try_into().expect("four bytes")))
}

/// Decodes a cache file; the body length must match the header exactly.
pub fn decode(bytes: &[u8], sample_rate: u32, hop: usize, win: usize) -> Result<(String, MelSpectrogram)> {
    let mut pos = 0;
    let id_len = read_u32(bytes, &mut pos)? as usize;
    let Some(id) = bytes.get(pos..pos + id_len) else {
        bail!("truncated mel cache id")
    };
    let id = String::from_utf8(id.to_vec()).context("mel cache id is not UTF-8")?;
    pos += id_len;
    let frames = read_u32(bytes, &mut pos)? as usize;
    let channels = read_u32(bytes, &mut pos)? as usize;
    if channels != N_MELS {
        bail!("mel cache for {id} has {channels} channels, expected {N_MELS}");
    }
    let body = &bytes[pos..];
    if body.len() != frames * channels * 4 {
        bail!(
            "corrupt mel cache for {id}: header says {frames}x{channels} but body has {} bytes",
            body.len()
        );
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
        .collect();
    Ok((id, MelSpectrogram::new(frames, data, sample_rate, hop, win)?))
}

pub fn write(dir: &Path, id: &str, mel: &MelSpectrogram) -> Result<()> {
    let path = cache_path(dir, id);
    fs::write(&path, encode(id, mel)).with_context(|| format!("writing {}", path.display()))
}

pub fn read(dir: &Path, id: &str, sample_rate: u32, hop: usize, win: usize) -> Result<MelSpectrogram> {
    let path = cache_path(dir, id);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let (stored, mel) = decode(&bytes, sample_rate, hop, win).with_context(|| path.display().to_string())?;
    if stored != id {
        bail!("{} holds utterance {stored}, expected {id}", path.display());
    }
    Ok(mel)
}
