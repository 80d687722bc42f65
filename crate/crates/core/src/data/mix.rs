use crate::dsp::Waveform;
use crate::error::{Result, TseError};

/// A target + interferer + noise mixture with all components stored scaled.
#[derive(Clone, Debug)]
pub struct MixtureExample {
    pub target: Waveform<f64>,
    pub interferer: Waveform<f64>,
    pub noise: Waveform<f64>,
    pub mixture: Waveform<f64>,
    /// Target plus interferer, without noise.
    pub clean_mixture: Waveform<f64>,
    pub enrollment: Option<Waveform<f64>>,
    pub snr_interferer_db: f64,
    pub snr_noise_db: f64,
    pub target_speaker: String,
    pub target_utterance: String,
    pub enrollment_utterance: String,
    pub interferer_speaker: String,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (energy(signal) / energy(noise)).log10()
}

/// Truncates every component to the shortest one, then scales the
/// interferer against the target and the noise against the clean mixture.
pub fn mix_minimum(
    target: &Waveform<f64>,
    interferer: &Waveform<f64>,
    noise: &Waveform<f64>,
    snr_interferer_db: f64,
    snr_noise_db: f64,
) -> Result<MixtureExample> {
    if target.sample_rate() != interferer.sample_rate() || target.sample_rate() != noise.sample_rate() {
        return Err(TseError::InvalidInput("mixture components differ in sample rate".into()));
    }
    let len = target.len().min(interferer.len()).min(noise.len());
    let (t, i, n) = (target.truncated(len), interferer.truncated(len), noise.truncated(len));
    for (name, w) in [("target", &t), ("interferer", &i), ("noise", &n)] {
        if energy(w.samples()) == 0.0 {
            return Err(TseError::InvalidInput(format!("{name} is silent")));
        }
    }
    let gi = (energy(t.samples()) / (energy(i.samples()) * 10f64.powf(snr_interferer_db / 10.0))).sqrt();
    let i = i.scaled(gi);
    let clean: Vec<f64> = t.samples().iter().zip(i.samples()).map(|(a, b)| a + b).collect();
    let gn = (energy(&clean) / (energy(n.samples()) * 10f64.powf(snr_noise_db / 10.0))).sqrt();
    let n = n.scaled(gn);
    let mixture: Vec<f64> = clean.iter().zip(n.samples()).map(|(a, b)| a + b).collect();
    let sr = t.sample_rate();
    Ok(MixtureExample {
        target: t,
        interferer: i,
        noise: n,
        mixture: Waveform::new(mixture, sr)?,
        clean_mixture: Waveform::new(clean, sr)?,
        enrollment: None,
        snr_interferer_db,
        snr_noise_db,
        target_speaker: String::new(),
        target_utterance: String::new(),
        enrollment_utterance: String::new(),
        interferer_speaker: String::new(),
    })
}

impl MixtureExample {
    /// Scales every component by `c`, preserving all ratios.
    pub fn rescaled(&self, c: f64) -> Self {
        Self {
            target: self.target.scaled(c),
            interferer: self.interferer.scaled(c),
            noise: self.noise.scaled(c),
            mixture: self.mixture.scaled(c),
            clean_mixture: self.clean_mixture.scaled(c),
            ..self.clone()
        }
    }

    pub fn peak(&self) -> f64 {
        [&self.target, &self.interferer, &self.noise, &self.mixture, &self.clean_mixture]
            .iter()
            .flat_map(|w| w.samples())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
