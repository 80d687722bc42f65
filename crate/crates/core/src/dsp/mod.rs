//! Deterministic signal transforms: framing, STFT/iSTFT, magnitude
//! compression and the ERB band projection.

mod drc;
mod erb;
mod stft;

pub use drc::{drc_compress, drc_expand, DrcConfig, DrcExpandOp};
pub use erb::{erb_project, erb_unproject, ErbFilterbank};
pub use stft::{istft, stft, ComplexSpec, IstftOp, StftConfig, StftEngine};

use tse_autograd::Scalar;

use crate::error::{Result, TseError};

/// Sample type for every signal-level computation: `f32` in training,
/// `f64` for oracle checks.
pub trait Real: Scalar + rustfft::FftNum {}

impl<T: Scalar + rustfft::FftNum> Real for T {}

pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// Mono audio at a fixed sample rate. Samples are finite and non-empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<S = f32> {
    samples: Vec<S>,
    sample_rate: u32,
}

impl<S: Real> Waveform<S> {
    pub fn new(samples: Vec<S>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(TseError::InvalidInput("waveform must have at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(TseError::InvalidInput(format!("non-finite sample at index {i}")));
        }
        if sample_rate == 0 {
            return Err(TseError::InvalidInput("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[S] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<S> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> S {
        self.samples.iter().map(|&v| v * v).sum()
    }

    /// First `len` samples.
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, c: S) -> Self {
        Self {
            samples: self.samples.iter().map(|&v| v * c).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn cast<T: Real>(&self) -> Waveform<T> {
        Waveform {
            samples: self.samples.iter().map(|v| T::from_f64_lossy(v.to_f64_lossy())).collect(),
            sample_rate: self.sample_rate,
        }
    }
}
