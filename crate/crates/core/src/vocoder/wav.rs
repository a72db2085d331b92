use std::path::Path;

use crate::error::{Error, Result};

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::Unsupported => Error::UnsupportedWav("unsupported WAV encoding".into()),
        other => Error::MalformedWav(other.to_string()),
    }
}

/// Reads a 16-bit PCM mono file as samples in `[-1, 1]` plus its sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedWav(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedWav(format!(
            "{:?} {}-bit samples, expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    Ok((samples, spec.sample_rate))
}

/// Quantizes a sample in `[-1, 1]` to 16-bit PCM.
pub fn quantize(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: &Path, signal: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    for &x in signal {
        writer.write_sample(quantize(x)).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}
