//! Mono WAV I/O. Integer PCM is mapped to `[-1, 1)`; float PCM is passed through.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Reads a mono file and returns `(samples, sample_rate)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Config(format!(
            "expected mono WAV, got {} channels",
            spec.channels
        )));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(Error::Config(format!(
                "unsupported WAV encoding {fmt:?}/{bits} bit"
            )))
        }
    };
    Ok((samples, spec.sample_rate))
}

pub fn write_wav(
    path: impl AsRef<Path>,
    samples: &[f64],
    sample_rate: u32,
    encoding: WavEncoding,
) -> Result<()> {
    let spec = match encoding {
        WavEncoding::Pcm16 => WavSpec {
            channels: 1,
            sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavEncoding::Float32 => WavSpec {
            channels: 1,
            sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v)?;
            }
            WavEncoding::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let x = vec![0.0, 0.25, -0.5, 0.75];
        write_wav(&path, &x, 16_000, WavEncoding::Float32).unwrap();
        let (y, sr) = read_wav(&path).unwrap();
        assert_eq!(sr, 16_000);
        assert_eq!(x, y);
    }

    #[test]
    fn pcm16_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav(&path, &[0.5, -1.0, 1.5], 16_000, WavEncoding::Pcm16).unwrap();
        let (y, _) = read_wav(&path).unwrap();
        assert_eq!(y, vec![0.5, -1.0, 32767.0 / 32768.0]);
    }
}
