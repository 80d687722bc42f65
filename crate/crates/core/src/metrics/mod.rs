//! SI-SDR, the two-term training objective, SI-SDR improvement, STOI and
//! corpus-level evaluation reports.

mod report;
mod stoi;

pub use report::{external_pesq, EvalReport, UtteranceScore, PESQ_ENV};
pub use stoi::{resample_poly, stoi};

use tse_autograd::{lit, CustomOp, Tape, Tensor, Var};

use crate::dsp::{Real, Waveform};
use crate::error::{Result, TseError};

/// Reporting clamp for SI-SDR in dB.
pub const SI_SDR_CLAMP_DB: f64 = 60.0;
/// Added to both energies in the differentiable SI-SDR.
pub const LOSS_EPS: f64 = 1e-8;

fn check_pair<S: Real>(estimate: &[S], reference: &[S]) -> Result<()> {
    if estimate.len() != reference.len() {
        return Err(TseError::Shape(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if reference.is_empty() {
        return Err(TseError::InvalidInput("empty signals".into()));
    }
    if reference.iter().all(|&v| v == S::zero()) {
        return Err(TseError::InvalidInput("reference is identically zero".into()));
    }
    Ok(())
}

/// Scale-invariant SDR in dB, clamped to `[-60, 60]`. Accumulates in f64.
pub fn si_sdr<S: Real>(estimate: &Waveform<S>, reference: &Waveform<S>) -> Result<f64> {
    si_sdr_slices(estimate.samples(), reference.samples())
}

pub fn si_sdr_slices<S: Real>(estimate: &[S], reference: &[S]) -> Result<f64> {
    check_pair(estimate, reference)?;
    let (mut dot, mut ref_energy) = (0.0f64, 0.0f64);
    for (&e, &r) in estimate.iter().zip(reference) {
        dot += e.to_f64_lossy() * r.to_f64_lossy();
        ref_energy += r.to_f64_lossy().powi(2);
    }
    let alpha = dot / ref_energy;
    let (mut target, mut error) = (0.0f64, 0.0f64);
    for (&e, &r) in estimate.iter().zip(reference) {
        let t = alpha * r.to_f64_lossy();
        target += t * t;
        error += (e.to_f64_lossy() - t).powi(2);
    }
    let db = if target == 0.0 {
        -SI_SDR_CLAMP_DB
    } else if error == 0.0 {
        SI_SDR_CLAMP_DB
    } else {
        10.0 * (target / error).log10()
    };
    Ok(db.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
}

/// `si_sdr(estimate, reference) - si_sdr(mixture, reference)`.
pub fn si_sdri<S: Real>(estimate: &Waveform<S>, reference: &Waveform<S>, mixture: &Waveform<S>) -> Result<f64> {
    Ok(si_sdr(estimate, reference)? - si_sdr(mixture, reference)?)
}

/// Unclamped, epsilon-stabilized negative SI-SDR used as a loss.
pub fn neg_si_sdr_loss<S: Real>(estimate: &[S], reference: &[S]) -> S {
    neg_si_sdr_parts(estimate, reference).0
}

/// Returns `(loss, alpha, target energy + eps, error energy + eps, <e, s>)`.
fn neg_si_sdr_parts<S: Real>(estimate: &[S], reference: &[S]) -> (S, S, S, S, S) {
    let eps: S = lit(LOSS_EPS);
    let dot: S = estimate.iter().zip(reference).map(|(&e, &r)| e * r).sum();
    let ref_energy: S = reference.iter().map(|&r| r * r).sum();
    let alpha = dot / (ref_energy + eps);
    let mut target = S::zero();
    let mut error = S::zero();
    let mut err_dot_ref = S::zero();
    for (&e, &r) in estimate.iter().zip(reference) {
        let t = alpha * r;
        target += t * t;
        error += (e - t) * (e - t);
        err_dot_ref += (e - t) * r;
    }
    let p = target + eps;
    let q = error + eps;
    let ten: S = lit(10.0);
    (-(ten * (p / q).log10()), alpha, p, q, err_dot_ref)
}

/// Tape op: scalar `-SI-SDR(estimate, reference)` against a fixed reference.
pub struct NegSiSdrOp<S> {
    reference: Vec<S>,
}

impl<S: Real> NegSiSdrOp<S> {
    pub fn apply(tape: &mut Tape<S>, estimate: Var, reference: &[S]) -> Result<Var> {
        check_pair(tape.value(estimate).data(), reference)?;
        let loss = neg_si_sdr_loss(tape.value(estimate).data(), reference);
        Ok(tape.custom(
            &[estimate],
            Tensor::scalar(loss),
            Box::new(NegSiSdrOp {
                reference: reference.to_vec(),
            }),
        ))
    }
}

impl<S: Real> CustomOp<S> for NegSiSdrOp<S> {
    fn name(&self) -> &'static str {
        "neg_si_sdr"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let est = inputs[0].data();
        let s = &self.reference;
        let eps: S = lit(LOSS_EPS);
        let (_, alpha, p, q, err_dot_ref) = neg_si_sdr_parts(est, s);
        let ref_energy: S = s.iter().map(|&r| r * r).sum();
        let d = ref_energy + eps;
        let two: S = lit(2.0);
        // d loss = -(10 / ln 10) (dP / P - dQ / Q)
        let c = -(lit::<S>(10.0) / S::LN_10()) * grad.data()[0];
        let out = est
            .iter()
            .zip(s)
            .map(|(&e, &r)| {
                let dp = two * alpha * ref_energy * r / d;
                let dq = two * (e - alpha * r) - two * err_dot_ref * r / d;
                c * (dp / p - dq / q)
            })
            .collect();
        vec![Some(Tensor::from_vec(inputs[0].shape(), out))]
    }
}

/// Relative weights of the two objective terms.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub denoiser: f64,
    pub backbone: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            denoiser: 1.0,
            backbone: 1.0,
        }
    }
}

impl LossWeights {
    /// Denoiser pretraining: enhancement term only.
    pub fn denoiser_only() -> Self {
        Self {
            denoiser: 1.0,
            backbone: 0.0,
        }
    }

    pub fn backbone_only() -> Self {
        Self {
            denoiser: 0.0,
            backbone: 1.0,
        }
    }
}

/// Combined objective split into its two terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// `-SI-SDR(y_d, y_clean)`
    pub denoiser_term: f64,
    /// `-SI-SDR(ŷ_target, y_target)`
    pub backbone_term: f64,
    pub weights: LossWeights,
}

/// Reporting form of the two-term loss (clamped SI-SDR).
pub fn joint_loss<S: Real>(
    denoised: &Waveform<S>,
    clean_mixture: &Waveform<S>,
    estimate: &Waveform<S>,
    target: &Waveform<S>,
    weights: LossWeights,
) -> Result<LossValue> {
    let lens = [denoised.len(), clean_mixture.len(), estimate.len(), target.len()];
    if lens.iter().any(|&l| l != lens[0]) {
        return Err(TseError::Shape(format!("loss inputs not length-aligned: {lens:?}")));
    }
    let denoiser_term = -si_sdr(denoised, clean_mixture)?;
    let backbone_term = -si_sdr(estimate, target)?;
    Ok(LossValue {
        total: weights.denoiser * denoiser_term + weights.backbone * backbone_term,
        denoiser_term,
        backbone_term,
        weights,
    })
}

/// Differentiable two-term loss on the tape. Terms with zero weight are
/// skipped entirely. Returns `(total, denoiser_term, backbone_term)`.
pub fn joint_loss_on_tape<S: Real>(
    tape: &mut Tape<S>,
    denoised: Option<Var>,
    clean_mixture: &[S],
    estimate: Option<Var>,
    target: &[S],
    weights: LossWeights,
) -> Result<(Var, Option<Var>, Option<Var>)> {
    let mut terms = Vec::new();
    let den = match denoised {
        Some(v) if weights.denoiser != 0.0 => {
            let l = NegSiSdrOp::apply(tape, v, clean_mixture)?;
            terms.push(tape.scale(l, lit(weights.denoiser)));
            Some(l)
        }
        _ => None,
    };
    let bb = match estimate {
        Some(v) if weights.backbone != 0.0 => {
            let l = NegSiSdrOp::apply(tape, v, target)?;
            terms.push(tape.scale(l, lit(weights.backbone)));
            Some(l)
        }
        _ => None,
    };
    let total = match terms.as_slice() {
        [] => return Err(TseError::Config("loss has no active term".into())),
        [one] => *one,
        [a, b] => tape.add(*a, *b),
        _ => unreachable!(),
    };
    Ok((total, den, bb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wf(v: Vec<f64>) -> Waveform<f64> {
        Waveform::new(v, 8000).unwrap()
    }

    #[test]
    fn identical_signals_hit_ceiling() {
        let s = wf((0..100).map(|i| (i as f64 * 0.3).sin()).collect());
        assert_eq!(si_sdr(&s, &s).unwrap(), SI_SDR_CLAMP_DB);
    }

    #[test]
    fn orthogonal_equal_energy_noise_is_zero_db() {
        // s = [1, 1, 0, 0], n = [1, -1, 0, 0]: orthogonal, equal norm.
        let s = wf(vec![1.0, 1.0, 0.0, 0.0]);
        let est = wf(vec![2.0, 0.0, 0.0, 0.0]);
        assert_eq!(si_sdr(&est, &s).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let a = wf(vec![1.0, 2.0]);
        let z = wf(vec![0.0, 0.0]);
        let b = wf(vec![1.0, 2.0, 3.0]);
        assert!(matches!(si_sdr(&a, &z), Err(TseError::InvalidInput(_))));
        assert!(matches!(si_sdr(&a, &b), Err(TseError::Shape(_))));
    }

    #[test]
    fn sdri_of_mixture_is_zero() {
        let s = wf((0..64).map(|i| (i as f64 * 0.2).cos()).collect());
        let m = wf((0..64).map(|i| (i as f64 * 0.2).cos() + 0.3 * (i as f64 * 1.1).sin()).collect());
        assert_eq!(si_sdri(&m, &s, &m).unwrap(), 0.0);
    }

    #[test]
    fn perfect_system_loss_is_minus_120() {
        let s = wf((0..64).map(|i| (i as f64 * 0.2).cos()).collect());
        let l = joint_loss(&s, &s, &s, &s, LossWeights::default()).unwrap();
        assert_eq!(l.total, -120.0);
        assert_eq!(l.total - l.denoiser_term - l.backbone_term, 0.0);
    }

    #[test]
    fn denoiser_only_zeroes_backbone_weight() {
        let s = wf((0..64).map(|i| (i as f64 * 0.2).cos()).collect());
        let e = wf((0..64).map(|i| (i as f64 * 0.7).sin()).collect());
        let l = joint_loss(&s, &s, &e, &s, LossWeights::denoiser_only()).unwrap();
        assert_eq!(l.total, l.denoiser_term);
    }
}
