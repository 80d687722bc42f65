use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use tse_autograd::{lit, CustomOp, Tensor};

use super::{Real, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Result, TseError};

/// Analysis/synthesis parameters. The window is a periodic Hann of
/// `win_len` samples and the FFT size equals the window length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    /// 32 ms window, 8 ms shift at 8 kHz: 256 / 64 samples, 129 bins.
    fn default() -> Self {
        Self::from_ms(DEFAULT_SAMPLE_RATE, 32.0, 8.0).expect("default STFT config is valid")
    }
}

impl StftConfig {
    pub fn new(sample_rate: u32, win_len: usize, hop: usize) -> Result<Self> {
        if win_len < 4 || win_len % 2 != 0 {
            return Err(TseError::InvalidInput(format!("window length {win_len} must be even and >= 4")));
        }
        if hop == 0 || win_len % hop != 0 {
            return Err(TseError::InvalidInput(format!(
                "hop {hop} must divide window length {win_len}"
            )));
        }
        Ok(Self {
            sample_rate,
            win_len,
            hop,
        })
    }

    pub fn from_ms(sample_rate: u32, window_ms: f64, hop_ms: f64) -> Result<Self> {
        let win = (window_ms * sample_rate as f64 / 1000.0).round() as usize;
        let hop = (hop_ms * sample_rate as f64 / 1000.0).round() as usize;
        Self::new(sample_rate, win, hop)
    }

    pub fn fft_size(&self) -> usize {
        self.win_len
    }

    /// `F = fft_size / 2 + 1`.
    pub fn freq_bins(&self) -> usize {
        self.win_len / 2 + 1
    }

    /// Frame count for a signal of `len` samples under centered framing.
    pub fn frames_for(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

/// Stacked real/imaginary STFT, `data: (2F, T)`: rows `0..F` hold real
/// parts and rows `F..2F` imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpec<S = f32> {
    data: Tensor<S>,
    config: StftConfig,
    compressed: bool,
    signal_len: usize,
}

impl<S: Real> ComplexSpec<S> {
    /// Wraps raw `(2F, T)` data, validating shape and finiteness.
    pub fn from_parts(data: Tensor<S>, config: StftConfig, compressed: bool, signal_len: usize) -> Result<Self> {
        let f = config.freq_bins();
        if data.ndim() != 2 || data.dim(0) != 2 * f || data.dim(1) == 0 {
            return Err(TseError::Shape(format!(
                "complex spec must be (2F={}, T>=1), got {:?}",
                2 * f,
                data.shape()
            )));
        }
        if !data.is_finite() {
            return Err(TseError::InvalidInput("complex spec contains non-finite values".into()));
        }
        Ok(Self {
            data,
            config,
            compressed,
            signal_len,
        })
    }

    pub fn zeros(config: StftConfig, frames: usize, signal_len: usize) -> Self {
        Self {
            data: Tensor::zeros(&[2 * config.freq_bins(), frames]),
            config,
            compressed: false,
            signal_len,
        }
    }

    pub fn data(&self) -> &Tensor<S> {
        &self.data
    }

    pub fn into_data(self) -> Tensor<S> {
        self.data
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn is_compressed(&self) -> bool {
        self.compressed
    }

    /// Length of the waveform this spec was computed from.
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn bins(&self) -> usize {
        self.config.freq_bins()
    }

    pub fn frames(&self) -> usize {
        self.data.dim(1)
    }

    pub fn re(&self, f: usize, t: usize) -> S {
        self.data.data()[f * self.frames() + t]
    }

    pub fn im(&self, f: usize, t: usize) -> S {
        self.data.data()[(self.bins() + f) * self.frames() + t]
    }

    /// `(F, T)` magnitudes.
    pub fn magnitude(&self) -> Tensor<S> {
        let (f, t) = (self.bins(), self.frames());
        let d = self.data.data();
        let mag = (0..f * t).map(|i| d[i].hypot(d[f * t + i])).collect();
        Tensor::from_vec(&[f, t], mag)
    }

    /// `(F, T)` phases, `atan2(im, re)` (0 for zero bins).
    pub fn phase(&self) -> Tensor<S> {
        let (f, t) = (self.bins(), self.frames());
        let d = self.data.data();
        let ph = (0..f * t).map(|i| d[f * t + i].atan2(d[i])).collect();
        Tensor::from_vec(&[f, t], ph)
    }

    /// Same metadata, new data (shape must match).
    pub fn with_data(&self, data: Tensor<S>) -> Result<Self> {
        if data.shape() != self.data.shape() {
            return Err(TseError::Shape(format!(
                "expected {:?}, got {:?}",
                self.data.shape(),
                data.shape()
            )));
        }
        Self::from_parts(data, self.config, self.compressed, self.signal_len)
    }

    #[cfg(test)]
    pub(crate) fn with_compressed(mut self, compressed: bool) -> Self {
        self.compressed = compressed;
        self
    }

    pub fn cast<T: Real>(&self) -> ComplexSpec<T> {
        ComplexSpec {
            data: self.data.cast(),
            config: self.config,
            compressed: self.compressed,
            signal_len: self.signal_len,
        }
    }
}

/// Reusable FFT plans and window for one [`StftConfig`].
pub struct StftEngine<S: Real> {
    config: StftConfig,
    window: Vec<S>,
    forward: Arc<dyn Fft<S>>,
    inverse: Arc<dyn Fft<S>>,
}

impl<S: Real> std::fmt::Debug for StftEngine<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftEngine").field("config", &self.config).finish()
    }
}

impl<S: Real> StftEngine<S> {
    pub fn new(config: StftConfig) -> Self {
        let n = config.fft_size();
        let window = (0..n)
            .map(|i| {
                let x = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                lit(0.5 - 0.5 * x.cos())
            })
            .collect();
        let mut planner = FftPlanner::new();
        Self {
            config,
            window,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[S] {
        &self.window
    }

    fn pad(&self) -> usize {
        self.config.win_len / 2
    }

    /// Sum of squared windows over every frame touching padded position `m`.
    fn envelope(&self, frames: usize) -> Vec<S> {
        let (n, hop) = (self.config.win_len, self.config.hop);
        let mut env = vec![S::zero(); (frames - 1) * hop + n];
        for t in 0..frames {
            for (e, &w) in env[t * hop..t * hop + n].iter_mut().zip(&self.window) {
                *e += w * w;
            }
        }
        env
    }

    /// Reflect-pads by half a window on both sides.
    fn reflect_pad(&self, x: &[S]) -> Vec<S> {
        let pad = self.pad() as isize;
        let len = x.len() as isize;
        (0..len + 2 * pad)
            .map(|i| {
                let mut j = i - pad;
                if j < 0 {
                    j = -j;
                }
                if j >= len {
                    j = 2 * (len - 1) - j;
                }
                x[j as usize]
            })
            .collect()
    }

    pub fn stft(&self, w: &Waveform<S>) -> Result<ComplexSpec<S>> {
        let cfg = self.config;
        if w.len() < cfg.win_len {
            return Err(TseError::InvalidInput(format!(
                "waveform of {} samples is shorter than one {}-sample window",
                w.len(),
                cfg.win_len
            )));
        }
        let padded = self.reflect_pad(w.samples());
        let frames = cfg.frames_for(w.len());
        let (n, f) = (cfg.fft_size(), cfg.freq_bins());
        let mut data = vec![S::zero(); 2 * f * frames];
        let mut buf = vec![Complex::new(S::zero(), S::zero()); n];
        for t in 0..frames {
            let seg = &padded[t * cfg.hop..t * cfg.hop + n];
            for ((b, &x), &win) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new(x * win, S::zero());
            }
            self.forward.process(&mut buf);
            for k in 0..f {
                data[k * frames + t] = buf[k].re;
                data[(f + k) * frames + t] = buf[k].im;
            }
        }
        Ok(ComplexSpec {
            data: Tensor::from_vec(&[2 * f, frames], data),
            config: cfg,
            compressed: false,
            signal_len: w.len(),
        })
    }

    /// Inverse of [`StftEngine::stft`] by windowed overlap-add, normalized
    /// by the squared-window envelope. Output length is `len`.
    pub fn istft_raw(&self, spec: &Tensor<S>, len: usize) -> Vec<S> {
        let cfg = self.config;
        let (n, f, hop) = (cfg.fft_size(), cfg.freq_bins(), cfg.hop);
        let frames = spec.dim(1);
        let env = self.envelope(frames);
        let mut acc = vec![S::zero(); env.len()];
        let mut buf = vec![Complex::new(S::zero(), S::zero()); n];
        let d = spec.data();
        let scale = S::one() / S::from_usize(n).unwrap();
        for t in 0..frames {
            for k in 0..f {
                let re = d[k * frames + t];
                let im = if k == 0 || k == n / 2 { S::zero() } else { d[(f + k) * frames + t] };
                buf[k] = Complex::new(re, im);
                if k != 0 && k != n / 2 {
                    buf[n - k] = Complex::new(re, -im);
                }
            }
            self.inverse.process(&mut buf);
            for (i, (b, &w)) in buf.iter().zip(&self.window).enumerate() {
                acc[t * hop + i] += b.re * scale * w;
            }
        }
        let pad = self.pad();
        let floor: S = lit(1e-10);
        (0..len)
            .map(|i| {
                let m = i + pad;
                if m < acc.len() && env[m] > floor {
                    acc[m] / env[m]
                } else {
                    S::zero()
                }
            })
            .collect()
    }

    /// Vector-Jacobian product of [`StftEngine::istft_raw`]: maps a gradient on
    /// the `len`-sample output back to a `(2F, frames)` gradient.
    pub fn istft_adjoint(&self, grad: &[S], frames: usize) -> Tensor<S> {
        let cfg = self.config;
        let (n, f, hop) = (cfg.fft_size(), cfg.freq_bins(), cfg.hop);
        let env = self.envelope(frames);
        let pad = self.pad();
        let floor: S = lit(1e-10);
        let mut gpad = vec![S::zero(); env.len()];
        for (i, &g) in grad.iter().enumerate() {
            let m = i + pad;
            if m < gpad.len() && env[m] > floor {
                gpad[m] = g / env[m];
            }
        }
        let mut out = vec![S::zero(); 2 * f * frames];
        let mut buf = vec![Complex::new(S::zero(), S::zero()); n];
        let inv_n = S::one() / S::from_usize(n).unwrap();
        let two: S = lit(2.0);
        for t in 0..frames {
            for (i, (b, &w)) in buf.iter_mut().zip(&self.window).enumerate() {
                *b = Complex::new(gpad[t * hop + i] * w, S::zero());
            }
            self.forward.process(&mut buf);
            for k in 0..f {
                let c = if k == 0 || k == n / 2 { inv_n } else { two * inv_n };
                out[k * frames + t] = c * buf[k].re;
                out[(f + k) * frames + t] = if k == 0 || k == n / 2 { S::zero() } else { c * buf[k].im };
            }
        }
        Tensor::from_vec(&[2 * f, frames], out)
    }

    pub fn istft(&self, s: &ComplexSpec<S>) -> Result<Waveform<S>> {
        if s.is_compressed() {
            return Err(TseError::InvalidState(
                "cannot invert a compressed spectrum; expand it first".into(),
            ));
        }
        if s.config() != &self.config {
            return Err(TseError::Shape("spectrum was computed with a different STFT config".into()));
        }
        Waveform::new(self.istft_raw(s.data(), s.signal_len()), self.config.sample_rate)
    }

    /// Spectral energy weighted for real-signal Parseval,
    /// `(1/N) Σ_t Σ_k c_k |X_tk|²` with `c_k = 2` off DC and Nyquist.
    pub fn spectral_energy(&self, spec: &Tensor<S>) -> S {
        let n = self.config.fft_size();
        let f = self.config.freq_bins();
        let frames = spec.dim(1);
        let d = spec.data();
        let mut total = S::zero();
        for k in 0..f {
            let c: S = if k == 0 || k == n / 2 { S::one() } else { lit(2.0) };
            for t in 0..frames {
                let (re, im) = (d[k * frames + t], d[(f + k) * frames + t]);
                total += c * (re * re + im * im);
            }
        }
        total / S::from_usize(n).unwrap()
    }

    /// Envelope-weighted time-domain energy of the reflect-padded signal,
    /// the time-side counterpart of [`StftEngine::spectral_energy`].
    pub fn synthesis_energy(&self, w: &Waveform<S>) -> S {
        let padded = self.reflect_pad(w.samples());
        let frames = self.config.frames_for(w.len());
        let env = self.envelope(frames);
        padded.iter().zip(&env).map(|(&x, &e)| x * x * e).sum()
    }
}

/// STFT with centered, reflect-padded framing: `T = 1 + floor(len / hop)`.
pub fn stft<S: Real>(w: &Waveform<S>, cfg: &StftConfig) -> Result<ComplexSpec<S>> {
    StftEngine::new(*cfg).stft(w)
}

pub fn istft<S: Real>(s: &ComplexSpec<S>) -> Result<Waveform<S>> {
    StftEngine::new(*s.config()).istft(s)
}

/// Tape op for the linear iSTFT; forward value is supplied by the caller.
pub struct IstftOp<S: Real> {
    engine: Arc<StftEngine<S>>,
    frames: usize,
}

impl<S: Real> IstftOp<S> {
    pub fn apply(
        tape: &mut tse_autograd::Tape<S>,
        engine: &Arc<StftEngine<S>>,
        spec: tse_autograd::Var,
        len: usize,
    ) -> tse_autograd::Var {
        let value = tape.value(spec);
        let frames = value.dim(1);
        let out = Tensor::from_vec(&[len], engine.istft_raw(value, len));
        tape.custom(
            &[spec],
            out,
            Box::new(IstftOp {
                engine: Arc::clone(engine),
                frames,
            }),
        )
    }
}

impl<S: Real> CustomOp<S> for IstftOp<S> {
    fn name(&self) -> &'static str {
        "istft"
    }

    fn backward(&self, _inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        vec![Some(self.engine.istft_adjoint(grad.data(), self.frames))]
    }
}
