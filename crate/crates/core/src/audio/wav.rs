use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other}", path.display())),
    }
}

/// Reads a mono WAV file into samples in [-1, 1], checking the sample rate.
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<Vec<f32>> {
    let mut reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Data(format!("{}: expected mono audio, found {} channels", path.display(), spec.channels)));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::Data(format!(
            "{}: sample rate {} Hz, expected {expected_rate} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    match spec.sample_format {
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale).map_err(|e| wav_err(path, e)))
                .collect()
        }
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map_err(|e| wav_err(path, e)))
            .collect(),
    }
}

/// Writes 16-bit PCM mono with the same full-scale convention as [`read_wav`];
/// samples outside the representable range are clipped.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        writer.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
