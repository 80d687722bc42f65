//! Seeded speech-like and noise signals.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;

/// Per-speaker voice parameters.
#[derive(Clone, Debug)]
pub struct Voice {
    pub f0: f64,
    pub formants: [f64; 3],
    pub bandwidths: [f64; 3],
    pub tilt: f64,
    pub vibrato_rate: f64,
    pub vibrato_depth: f64,
    pub syllable_rate: f64,
    pub breathiness: f64,
}

impl Voice {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_0000_0001);
        let f0 = (rng.random_range(80f64.ln()..300f64.ln())).exp();
        // Higher voices get proportionally higher formants.
        let scale = (f0 / 150.0).powf(0.25);
        Self {
            f0,
            formants: [
                rng.random_range(350.0..850.0) * scale,
                rng.random_range(1000.0..2000.0) * scale,
                rng.random_range(2300.0..3100.0) * scale.min(1.15),
            ],
            bandwidths: [
                rng.random_range(70.0..130.0),
                rng.random_range(90.0..160.0),
                rng.random_range(120.0..220.0),
            ],
            tilt: rng.random_range(0.6..1.2),
            vibrato_rate: rng.random_range(4.0..7.0),
            vibrato_depth: rng.random_range(0.01..0.03),
            syllable_rate: rng.random_range(3.0..5.5),
            breathiness: rng.random_range(0.05..0.2),
        }
    }

    fn envelope(&self, f: f64, formants: &[f64; 3]) -> f64 {
        let gains = [1.0, 0.6, 0.3];
        let res: f64 = formants
            .iter()
            .zip(&self.bandwidths)
            .zip(&gains)
            .map(|((&fc, &bw), &g)| g / (1.0 + ((f - fc) / bw).powi(2)))
            .sum();
        res * (100.0 / f.max(100.0)).powf(self.tilt)
    }
}

/// One syllable: voiced span followed by a short pause.
struct Syllable {
    start: usize,
    voiced: usize,
    f0_scale: (f64, f64),
    formant_shift: [f64; 3],
    gain: f64,
}

fn plan_syllables(voice: &Voice, len: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<Syllable> {
    let mut out = Vec::new();
    let mut pos = (rng.random_range(0.02..0.08) * sr) as usize;
    while pos + ((0.06 * sr) as usize) < len {
        let dur = (sr / voice.syllable_rate * rng.random_range(0.7..1.3)) as usize;
        let voiced = ((dur as f64 * rng.random_range(0.65..0.85)) as usize).min(len - pos);
        out.push(Syllable {
            start: pos,
            voiced,
            f0_scale: (rng.random_range(0.85..1.15), rng.random_range(0.85..1.15)),
            formant_shift: [
                rng.random_range(0.75..1.3),
                rng.random_range(0.8..1.25),
                rng.random_range(0.9..1.1),
            ],
            gain: rng.random_range(0.5..1.0),
        });
        pos += dur;
    }
    out
}

/// Speech-like utterance for a speaker: a formant-shaped harmonic series
/// with vibrato and syllabic intonation, plus amplitude-modulated
/// formant-band noise. Peak-normalized to 0.9.
pub fn synth_utterance(speaker_seed: u64, utterance_seed: u64, duration: f64, sample_rate: u32) -> Waveform<f64> {
    let voice = Voice::from_seed(speaker_seed);
    let sr = sample_rate as f64;
    let len = ((duration.max(0.5)) * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(
        speaker_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ utterance_seed.wrapping_add(0x632B_E59B_D9B4_E019),
    );
    let syllables = plan_syllables(&voice, len, sr, &mut rng);
    let nyquist = sr / 2.0;
    let mut out = vec![0.0; len];
    let vib_phase0 = rng.random_range(0.0..2.0 * PI);
    for syl in &syllables {
        let mut phase = rng.random_range(0.0..2.0 * PI);
        let formants = [
            voice.formants[0] * syl.formant_shift[0],
            voice.formants[1] * syl.formant_shift[1],
            voice.formants[2] * syl.formant_shift[2],
        ];
        let max_h = (nyquist * 0.95 / (voice.f0 * 0.7)) as usize;
        // Harmonic amplitudes follow the envelope at the syllable's mean pitch.
        let f0_mid = voice.f0 * 0.5 * (syl.f0_scale.0 + syl.f0_scale.1);
        let amps: Vec<f64> = (1..=max_h).map(|h| voice.envelope(h as f64 * f0_mid, &formants)).collect();
        let mut noise_state = [0.0f64; 2];
        let (fc, bw) = (formants[1], voice.bandwidths[1] * 3.0);
        let (b1, b2) = resonator(fc, bw, sr);
        for n in 0..syl.voiced {
            let i = syl.start + n;
            let u = n as f64 / syl.voiced as f64;
            let env = (PI * u).sin().powf(0.6) * syl.gain;
            let t = i as f64 / sr;
            let f0 = voice.f0
                * (syl.f0_scale.0 + (syl.f0_scale.1 - syl.f0_scale.0) * u)
                * (1.0 + voice.vibrato_depth * (2.0 * PI * voice.vibrato_rate * t + vib_phase0).sin());
            phase += 2.0 * PI * f0 / sr;
            let mut v = 0.0;
            for (k, &a) in amps.iter().enumerate() {
                let fk = (k + 1) as f64 * f0;
                if fk >= nyquist * 0.95 {
                    break;
                }
                v += a * ((k + 1) as f64 * phase).sin();
            }
            let w: f64 = rng.random_range(-1.0..1.0);
            let y = w - b1 * noise_state[0] - b2 * noise_state[1];
            noise_state = [y, noise_state[0]];
            let am = 0.5 + 0.5 * (2.0 * PI * 2.0 * voice.syllable_rate * t).sin().abs();
            out[i] += env * (v + voice.breathiness * am * y);
        }
    }
    normalize_peak(&mut out, 0.9);
    Waveform::new(out, sample_rate).expect("synthesized audio is finite")
}

/// Deterministic speech-like signal for a speaker seed.
pub fn synth_speaker_signal(speaker_seed: u64, duration: f64, sample_rate: u32) -> Waveform<f64> {
    synth_utterance(speaker_seed, 0, duration, sample_rate)
}

/// Two-pole resonator feedback coefficients.
fn resonator(fc: f64, bw: f64, sr: f64) -> (f64, f64) {
    let r = (-PI * bw / sr).exp();
    (-2.0 * r * (2.0 * PI * fc / sr).cos(), r * r)
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    Pink,
    Babble,
}

/// Seeded coloured noise, peak-normalized to 0.5.
pub fn synth_noise(kind: NoiseKind, seed: u64, len: usize, sample_rate: u32) -> Waveform<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0dd_c0ffee);
    let sr = sample_rate as f64;
    let mut out = match kind {
        NoiseKind::Pink => {
            // Paul Kellet's refined pink filter.
            let mut b = [0.0f64; 7];
            (0..len)
                .map(|_| {
                    let w: f64 = rng.random_range(-1.0..1.0);
                    b[0] = 0.99886 * b[0] + w * 0.0555179;
                    b[1] = 0.99332 * b[1] + w * 0.0750759;
                    b[2] = 0.96900 * b[2] + w * 0.1538520;
                    b[3] = 0.86650 * b[3] + w * 0.3104856;
                    b[4] = 0.55000 * b[4] + w * 0.5329522;
                    b[5] = -0.7616 * b[5] - w * 0.0168980;
                    let y = b.iter().sum::<f64>() + w * 0.5362;
                    b[6] = w * 0.115926;
                    y
                })
                .collect::<Vec<_>>()
        }
        NoiseKind::Babble => {
            // Several speech-shaped bands with independent slow modulation.
            let talkers = 4;
            let mut acc = vec![0.0; len];
            for _ in 0..talkers {
                let fc = rng.random_range(300.0..1800.0);
                let (b1, b2) = resonator(fc, rng.random_range(300.0..700.0), sr);
                let rate = rng.random_range(2.0..6.0);
                let ph = rng.random_range(0.0..2.0 * PI);
                let mut s = [0.0f64; 2];
                for (i, a) in acc.iter_mut().enumerate() {
                    let w: f64 = rng.random_range(-1.0..1.0);
                    let y = w - b1 * s[0] - b2 * s[1];
                    s = [y, s[0]];
                    let m = 0.55 + 0.45 * (2.0 * PI * rate * i as f64 / sr + ph).sin();
                    *a += m * y;
                }
            }
            acc
        }
    };
    normalize_peak(&mut out, 0.5);
    Waveform::new(out, sample_rate).expect("synthesized noise is finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = synth_speaker_signal(11, 1.0, 8000);
        let b = synth_speaker_signal(11, 1.0, 8000);
        assert_eq!(a.samples(), b.samples());
        assert_eq!(a.len(), 8000);
        let peak = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.9).abs() < 1e-12);
    }

    #[test]
    fn utterances_differ() {
        let a = synth_utterance(3, 1, 1.0, 8000);
        let b = synth_utterance(3, 2, 1.0, 8000);
        assert_ne!(a.samples(), b.samples());
    }

    #[test]
    fn noise_kinds_finite() {
        for k in [NoiseKind::Pink, NoiseKind::Babble] {
            let n = synth_noise(k, 5, 4000, 8000);
            assert!(n.energy() > 0.0);
        }
    }
}
