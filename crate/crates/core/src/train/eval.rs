//! Inference pipeline and corpus-level evaluation.

use std::path::PathBuf;

use crate::augment::StrategyName;
use crate::dsp::{ComplexSpec, Waveform};
use crate::error::{Result, TseError};
use crate::guidance::{
    context_interaction_with, noise_agnostic_guidance, stack_features, GuidanceFeature, GuidanceSource,
    InteractionConfig, StackLayout,
};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::metrics::{external_pesq, si_sdr, si_sdri, stoi, EvalReport, UtteranceScore, PESQ_ENV};
use crate::nets::{Backbone, Denoiser};
use crate::pipeline::Frontend;
use crate::wav::{read_wav, write_wav};

use super::Checkpoint;

/// Full extraction pipeline: analysis, optional denoiser, guidance, backbone, synthesis.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub frontend: Frontend<f32>,
    /// `None` means the identity denoiser (plain noisy interaction).
    pub denoiser: Option<Denoiser<f32>>,
    pub backbone: Option<Backbone<f32>>,
    pub layout: StackLayout,
}

impl Extractor {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let frontend = Frontend::from_config(&ck.frontend);
        if let Some(d) = &ck.denoiser {
            if d.stft_config() != frontend.stft_config() {
                return Err(TseError::Config("denoiser and front end disagree on the STFT".into()));
            }
        }
        let denoiser = if ck.plan.identity_denoiser { None } else { ck.denoiser.clone() };
        if denoiser.is_none() && !ck.plan.identity_denoiser {
            return Err(TseError::Config("checkpoint holds no denoiser".into()));
        }
        let layout = ck.plan.strategy.descriptor().layout;
        Ok(Self {
            frontend,
            denoiser,
            backbone: ck.backbone.clone(),
            layout,
        })
    }

    /// Compressed `Y_d`; the identity when no denoiser is loaded.
    pub fn denoise_spec(&self, y: &ComplexSpec<f32>) -> Result<ComplexSpec<f32>> {
        match &self.denoiser {
            Some(d) => d.enhance(y),
            None => Ok(y.clone()),
        }
    }

    pub fn denoise(&self, mixture: &Waveform<f32>) -> Result<Waveform<f32>> {
        let y = self.frontend.analyze(mixture)?;
        self.frontend.synthesize(&self.denoise_spec(&y)?)
    }

    /// Guidance and `Y_d` for compressed enrollment and mixture spectra.
    pub fn guidance(
        &self,
        e: &ComplexSpec<f32>,
        y: &ComplexSpec<f32>,
    ) -> Result<(GuidanceFeature<f32>, ComplexSpec<f32>)> {
        match &self.denoiser {
            Some(d) => noise_agnostic_guidance(e, y, d),
            None => Ok((
                context_interaction_with(e, y, InteractionConfig::default(), GuidanceSource::NoisyInteraction)?,
                y.clone(),
            )),
        }
    }

    pub fn extract(&self, mixture: &Waveform<f32>, enrollment: &Waveform<f32>) -> Result<Waveform<f32>> {
        let backbone = self
            .backbone
            .as_ref()
            .ok_or_else(|| TseError::InvalidState("no backbone loaded; this checkpoint only denoises".into()))?;
        let y = self.frontend.analyze(mixture)?;
        let e = self.frontend.analyze(enrollment)?;
        let (g, yd) = self.guidance(&e, &y)?;
        let x = stack_features(&y, &g, Some(&yd), self.layout)?;
        let mask = backbone.infer_mask(&x)?;
        let est = tse_autograd::tape::complex_mul(&mask, y.data());
        self.frontend.synthesize(&y.with_data(est)?)
    }

    /// Estimate and reference for one manifest entry: the target for a full
    /// system, the clean two-speaker mixture for a denoiser-only checkpoint.
    fn run_entry(&self, m: &DatasetManifest, e: &ManifestEntry) -> Result<(Waveform<f32>, Waveform<f32>, Waveform<f32>)> {
        let mix: Waveform<f32> = read_wav(&m.resolve(&e.mixture))?;
        if self.backbone.is_some() {
            let enroll = read_wav(&m.resolve(&e.enrollment))?;
            let target = read_wav(&m.resolve(&e.target))?;
            Ok((self.extract(&mix, &enroll)?, target, mix))
        } else {
            let clean = read_wav(&m.resolve(&e.clean_mix))?;
            Ok((self.denoise(&mix)?, clean, mix))
        }
    }

    pub fn system_name(&self, strategy: StrategyName) -> String {
        match (&self.backbone, &self.denoiser) {
            (None, _) => "denoiser".into(),
            (Some(_), None) => "baseline_noisy_guidance".into(),
            (Some(_), Some(_)) => format!("lgtse_{}", strategy.as_str()),
        }
    }
}

fn align(est: &Waveform<f32>, len: usize) -> Waveform<f32> {
    if est.len() == len {
        est.clone()
    } else {
        let mut s = est.samples().to_vec();
        s.resize(len, 0.0);
        Waveform::new(s, est.sample_rate()).expect("resized waveform is non-empty")
    }
}

fn score(
    id: &str,
    est: &Waveform<f32>,
    reference: &Waveform<f32>,
    mixture: &Waveform<f32>,
    pesq_dir: Option<&PathBuf>,
) -> Result<UtteranceScore> {
    let est = align(est, reference.len());
    let mixture = align(mixture, reference.len());
    let pesq = match pesq_dir {
        Some(dir) => {
            let r = dir.join(format!("{id}_ref.wav"));
            let p = dir.join(format!("{id}_est.wav"));
            write_wav(&r, reference)?;
            write_wav(&p, &est)?;
            external_pesq(&r, &p, reference.sample_rate())
        }
        None => None,
    };
    Ok(UtteranceScore {
        id: id.to_string(),
        si_sdr: si_sdr(&est, reference)?,
        si_sdri: si_sdri(&est, reference, &mixture)?,
        stoi: stoi(&est, reference).ok(),
        pesq,
    })
}

/// Scores every entry; per-entry failures are recorded and skipped.
pub fn evaluate(ck: &Checkpoint, manifest: &DatasetManifest) -> Result<EvalReport> {
    let ex = Extractor::from_checkpoint(ck)?;
    let mut report = EvalReport::new(ex.system_name(ck.plan.strategy));
    let pesq_dir = std::env::var_os(PESQ_ENV).map(|_| {
        std::env::temp_dir().join(format!("lgtse_pesq_{}", std::process::id()))
    });
    for e in &manifest.entries {
        let outcome = ex
            .run_entry(manifest, e)
            .and_then(|(est, reference, mix)| score(&e.id, &est, &reference, &mix, pesq_dir.as_ref()));
        match outcome {
            Ok(s) => report.utterances.push(s),
            Err(err) => report.skipped.push((e.id.clone(), err.to_string())),
        }
    }
    if let Some(dir) = pesq_dir {
        let _ = std::fs::remove_dir_all(dir);
    }
    Ok(report)
}
