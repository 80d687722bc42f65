//! 16-bit PCM mono WAV I/O. Samples map to `[-1, 1)` by division by 32768.

use std::path::Path;

use crate::dsp::{Real, Waveform};
use crate::error::{Result, TseError};

pub fn read_wav<S: Real>(path: &Path) -> Result<Waveform<S>> {
    let mut reader = hound::WavReader::open(path).map_err(|e| TseError::ingest(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(TseError::ingest(
            path,
            format!(
                "expected 16-bit PCM mono, found {} channel(s) at {} bits",
                spec.channels, spec.bits_per_sample
            ),
        ));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| S::from_f64_lossy(v as f64 / 32768.0)))
        .collect::<Result<Vec<S>, _>>()
        .map_err(|e| TseError::ingest(path, e))?;
    Waveform::new(samples, spec.sample_rate).map_err(|e| TseError::ingest(path, e))
}

/// Quantizes to 16 bits (round to nearest, clamp to the representable range).
pub fn quantize(v: f64) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav<S: Real>(path: &Path, w: &Waveform<S>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| TseError::ingest(path, e);
    let mut writer = hound::WavWriter::create(path, spec).map_err(io_err)?;
    for &s in w.samples() {
        writer.write_sample(quantize(s.to_f64_lossy())).map_err(io_err)?;
    }
    writer.finalize().map_err(io_err)
}
