//! Short-time objective intelligibility (Taal et al.), computed at 10 kHz.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{Real, Waveform};
use crate::error::{Result, TseError};

const FS: u32 = 10_000;
const N_FRAME: usize = 256;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Windowed-sinc lowpass with a Kaiser window, unit DC gain. `cutoff` is a
/// fraction of Nyquist.
fn kaiser_lowpass(taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let mid = (taps - 1) as f64 / 2.0;
    let denom = bessel_i0(beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let x = n as f64 - mid;
            let arg = cutoff * x;
            let sinc = if arg == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
            };
            let r = x / mid;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom;
            cutoff * sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Zero-phase polyphase rational resampling by `up / down` with a Kaiser
/// (beta 5) anti-aliasing filter. Output length is `ceil(len * up / down)`.
pub fn resample_poly(x: &[f64], up: u32, down: u32) -> Vec<f64> {
    let g = gcd(up as u64, down as u64) as usize;
    let (up, down) = (up as usize / g, down as usize / g);
    if up == down {
        return x.to_vec();
    }
    let max_rate = up.max(down);
    let half = 10 * max_rate;
    let mut h = kaiser_lowpass(2 * half + 1, 1.0 / max_rate as f64, 5.0);
    h.iter_mut().for_each(|v| *v *= up as f64);
    let out_len = (x.len() * up).div_ceil(down);
    (0..out_len)
        .map(|m| {
            // y[m] = sum_k x[k] h[m*down + half - k*up]
            let centre = m * down + half;
            let k_lo = centre.saturating_sub(2 * half).div_ceil(up);
            let k_hi = (centre / up).min(x.len().saturating_sub(1));
            (k_lo..=k_hi)
                .filter(|&k| k < x.len())
                .map(|k| x[k] * h[centre - k * up])
                .sum()
        })
        .collect()
}

/// Symmetric Hann of length `n + 2` with the end zeros dropped.
fn hanning_inner(n: usize) -> Vec<f64> {
    let m = n + 2;
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (m - 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(frame)).step_by(hop)
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = N_FRAME / 2;
    let w = hanning_inner(N_FRAME);
    let frames = |s: &[f64]| -> Vec<Vec<f64>> {
        frame_starts(s.len(), N_FRAME, hop)
            .map(|i| s[i..i + N_FRAME].iter().zip(&w).map(|(a, b)| a * b).collect())
            .collect()
    };
    let xf = frames(x);
    let yf = frames(y);
    let energies: Vec<f64> = xf
        .iter()
        .map(|f| 20.0 * (f.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS).log10())
        .collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..xf.len()).filter(|&i| max - DYN_RANGE_DB - energies[i] < 0.0).collect();
    let overlap_add = |fr: &[Vec<f64>]| -> Vec<f64> {
        if keep.is_empty() {
            return Vec::new();
        }
        let mut out = vec![0.0; (keep.len() - 1) * hop + N_FRAME];
        for (j, &i) in keep.iter().enumerate() {
            for (o, v) in out[j * hop..j * hop + N_FRAME].iter_mut().zip(&fr[i]) {
                *o += v;
            }
        }
        out
    };
    (overlap_add(&xf), overlap_add(&yf))
}

/// Magnitude spectrogram, `frames x (NFFT/2 + 1)`.
fn magnitude_frames(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hanning_inner(N_FRAME);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    frame_starts(x.len(), N_FRAME, N_FRAME / 2)
        .map(|i| {
            let mut buf: Vec<Complex<f64>> = (0..NFFT)
                .map(|n| Complex::new(if n < N_FRAME { x[i + n] * w[n] } else { 0.0 }, 0.0))
                .collect();
            fft.process(&mut buf);
            buf[..NFFT / 2 + 1].iter().map(|c| c.norm()).collect()
        })
        .collect()
}

/// One-third octave band edges as bin ranges `[lo, hi)`.
fn third_octave_bins() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |f: f64| -> usize {
        let mut best = 0;
        for (i, &v) in freqs.iter().enumerate() {
            if (v - f).powi(2) < (freqs[best] - f).powi(2) {
                best = i;
            }
        }
        best
    };
    (0..NUM_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes, `bands x frames`.
fn band_envelopes(spec: &[Vec<f64>], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    bands
        .iter()
        .map(|&(lo, hi)| {
            spec.iter()
                .map(|frame| frame[lo..hi].iter().map(|m| m * m).sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn centre_and_normalize(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|a| *a -= mean);
    let n = norm(v) + EPS;
    v.iter_mut().for_each(|a| *a /= n);
}

/// STOI of `estimate` against `reference`. Signals shorter than 30 analysis
/// frames after silence removal are rejected.
pub fn stoi<S: Real>(estimate: &Waveform<S>, reference: &Waveform<S>) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(TseError::Shape(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if estimate.sample_rate() != reference.sample_rate() {
        return Err(TseError::InvalidInput("sample rates differ".into()));
    }
    let to_f64 = |w: &Waveform<S>| w.samples().iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>();
    let (mut x, mut y) = (to_f64(reference), to_f64(estimate));
    let sr = reference.sample_rate();
    if sr != FS {
        x = resample_poly(&x, FS, sr);
        y = resample_poly(&y, FS, sr);
    }
    let (x, y) = remove_silent_frames(&x, &y);
    let xs = magnitude_frames(&x);
    let ys = magnitude_frames(&y);
    if xs.len() < SEGMENT {
        return Err(TseError::InvalidInput(format!(
            "signal too short for STOI: {} frames after silence removal, need {SEGMENT}",
            xs.len()
        )));
    }
    let bands = third_octave_bins();
    let xb = band_envelopes(&xs, &bands);
    let yb = band_envelopes(&ys, &bands);
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=xs.len() {
        for (xband, yband) in xb.iter().zip(&yb) {
            let mut xseg = xband[m - SEGMENT..m].to_vec();
            let yseg = &yband[m - SEGMENT..m];
            let alpha = norm(&xseg) / (norm(yseg) + EPS);
            let mut yp: Vec<f64> = yseg
                .iter()
                .zip(&xseg)
                .map(|(&yv, &xv)| (yv * alpha).min(xv * (1.0 + clip)))
                .collect();
            centre_and_normalize(&mut yp);
            centre_and_normalize(&mut xseg);
            total += yp.iter().zip(&xseg).map(|(a, b)| a * b).sum::<f64>();
        }
        count += 1;
    }
    Ok(total / (count * NUM_BANDS) as f64)
}
