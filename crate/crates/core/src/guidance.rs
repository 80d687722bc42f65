//! Enrollment-mixture context interaction and backbone input stacking.

use serde::{Deserialize, Serialize};
use tse_autograd::{lit, Tape, Tensor, Var};

use crate::dsp::{ComplexSpec, Real};
use crate::error::{Result, TseError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceSource {
    NoisyInteraction,
    DenoisedInteraction,
    OracleCleanInteraction,
}

/// Guidance aligned to mixture frames, shape `(2F, T_y)`.
#[derive(Clone, Debug)]
pub struct GuidanceFeature<S = f32> {
    pub data: Tensor<S>,
    pub source: GuidanceSource,
}

/// Optional logit scaling by `1/sqrt(2F)`. Off by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionConfig {
    pub scale_logits: bool,
}

impl InteractionConfig {
    fn logit_scale(&self, rows: usize) -> f64 {
        if self.scale_logits {
            1.0 / (rows as f64).sqrt()
        } else {
            1.0
        }
    }
}

fn check_pair<S: Real>(e: &ComplexSpec<S>, y: &ComplexSpec<S>) -> Result<()> {
    if e.data().dim(0) != y.data().dim(0) {
        return Err(TseError::Shape(format!(
            "enrollment has {} rows, mixture {}",
            e.data().dim(0),
            y.data().dim(0)
        )));
    }
    if e.config() != y.config() || e.is_compressed() != y.is_compressed() {
        return Err(TseError::InvalidInput(
            "enrollment and mixture differ in STFT config or compression".into(),
        ));
    }
    if !e.data().is_finite() || !y.data().is_finite() {
        return Err(TseError::InvalidInput("non-finite spectrum".into()));
    }
    Ok(())
}

/// Attention weights `softmax(Eᵀ Y)` over the enrollment-frame axis, shape `(T_e, T_y)`.
pub fn attention_weights<S: Real>(e: &Tensor<S>, y: &Tensor<S>, cfg: InteractionConfig) -> Tensor<S> {
    let mut logits = e.transpose2().matmul(y);
    let c = cfg.logit_scale(e.dim(0));
    if c != 1.0 {
        logits.scale_in_place(lit(c));
    }
    tse_autograd::softmax(&logits, 0)
}

/// `E × softmax(Eᵀ Y)`; each output column is a convex combination of
/// enrollment columns.
pub fn context_interaction<S: Real>(e: &ComplexSpec<S>, y: &ComplexSpec<S>) -> Result<GuidanceFeature<S>> {
    context_interaction_with(e, y, InteractionConfig::default(), GuidanceSource::NoisyInteraction)
}

pub fn context_interaction_with<S: Real>(
    e: &ComplexSpec<S>,
    y: &ComplexSpec<S>,
    cfg: InteractionConfig,
    source: GuidanceSource,
) -> Result<GuidanceFeature<S>> {
    check_pair(e, y)?;
    let a = attention_weights(e.data(), y.data(), cfg);
    Ok(GuidanceFeature {
        data: e.data().matmul(&a),
        source,
    })
}

/// Differentiable interaction; `e` is `(2F, T_e)` and `y` is `(2F, T_y)`.
pub fn context_interaction_on_tape<S: Real>(tape: &mut Tape<S>, e: Var, y: Var, cfg: InteractionConfig) -> Result<Var> {
    let (es, ys) = (tape.shape(e).to_vec(), tape.shape(y).to_vec());
    if es.len() != 2 || ys.len() != 2 || es[0] != ys[0] {
        return Err(TseError::Shape(format!("interaction inputs {es:?} and {ys:?}")));
    }
    let et = tape.permute(e, &[1, 0]);
    let mut logits = tape.matmul(et, y);
    let c = cfg.logit_scale(es[0]);
    if c != 1.0 {
        logits = tape.scale(logits, lit(c));
    }
    let a = tape.softmax(logits, 0);
    Ok(tape.matmul(e, a))
}

/// Spectrum-to-spectrum enhancer used ahead of the interaction.
pub trait SpecDenoiser<S: Real> {
    fn denoise(&self, y: &ComplexSpec<S>) -> Result<ComplexSpec<S>>;
}

/// Passes the mixture through unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDenoiser;

impl<S: Real> SpecDenoiser<S> for IdentityDenoiser {
    fn denoise(&self, y: &ComplexSpec<S>) -> Result<ComplexSpec<S>> {
        Ok(y.clone())
    }
}

/// Returns a fixed spectrum, typically the clean mixture.
#[derive(Clone, Debug)]
pub struct OracleDenoiser<S: Real> {
    pub clean: ComplexSpec<S>,
}

impl<S: Real> SpecDenoiser<S> for OracleDenoiser<S> {
    fn denoise(&self, _y: &ComplexSpec<S>) -> Result<ComplexSpec<S>> {
        Ok(self.clean.clone())
    }
}

/// Denoises the mixture, then interacts the enrollment with the result.
pub fn noise_agnostic_guidance<S: Real, D: SpecDenoiser<S> + ?Sized>(
    e: &ComplexSpec<S>,
    y: &ComplexSpec<S>,
    denoiser: &D,
) -> Result<(GuidanceFeature<S>, ComplexSpec<S>)> {
    let yd = denoiser.denoise(y)?;
    if yd.data().shape() != y.data().shape() {
        return Err(TseError::Shape(format!(
            "denoiser returned {:?} for input {:?}",
            yd.data().shape(),
            y.data().shape()
        )));
    }
    let g = context_interaction_with(e, &yd, InteractionConfig::default(), GuidanceSource::DenoisedInteraction)?;
    Ok((g, yd))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackLayout {
    /// `[Y_re, Y_im, G_re, G_im]`
    BaseConcat,
    /// `[Y_re, Y_im, Yd_re, Yd_im, G_re, G_im]`
    DistortionConcat,
}

impl StackLayout {
    pub fn channels(self) -> usize {
        match self {
            StackLayout::BaseConcat => 4,
            StackLayout::DistortionConcat => 6,
        }
    }
}

/// Backbone input, `(C, F, T)`.
#[derive(Clone, Debug)]
pub struct StackedInput<S = f32> {
    pub data: Tensor<S>,
    pub layout: StackLayout,
}

impl<S: Real> StackedInput<S> {
    /// Channels `2k, 2k+1` reassembled into a `(2F, T)` tensor.
    pub fn pair(&self, k: usize) -> Tensor<S> {
        let (f, t) = (self.data.dim(1), self.data.dim(2));
        self.data.narrow(0, 2 * k, 2).reshaped(&[2 * f, t])
    }
}

/// Stacks `(2F, T)` tensors into `(C, F, T)` per `layout`.
pub fn stack_features<S: Real>(
    y: &ComplexSpec<S>,
    g: &GuidanceFeature<S>,
    yd: Option<&ComplexSpec<S>>,
    layout: StackLayout,
) -> Result<StackedInput<S>> {
    let mut parts = vec![y.data()];
    if layout == StackLayout::DistortionConcat {
        let yd = yd.ok_or_else(|| TseError::InvalidInput("distortion layout needs the denoised spectrum".into()))?;
        parts.push(yd.data());
    }
    parts.push(&g.data);
    Ok(StackedInput {
        data: stack_pairs(&parts)?,
        layout,
    })
}

/// Concatenates `(2F, T)` tensors as `(2·n, F, T)`.
pub fn stack_pairs<S: Real>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let shape = parts[0].shape().to_vec();
    if shape.len() != 2 || shape[0] % 2 != 0 {
        return Err(TseError::Shape(format!("expected (2F, T), got {shape:?}")));
    }
    if let Some(p) = parts.iter().find(|p| p.shape() != shape.as_slice()) {
        return Err(TseError::Shape(format!("stack inputs {:?} and {shape:?}", p.shape())));
    }
    let (f, t) = (shape[0] / 2, shape[1]);
    let views: Vec<Tensor<S>> = parts.iter().map(|p| p.reshaped(&[2, f, t])).collect();
    let refs: Vec<&Tensor<S>> = views.iter().collect();
    Ok(Tensor::concat(&refs, 0))
}
