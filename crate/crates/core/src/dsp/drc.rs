use tse_autograd::{lit, CustomOp, Tape, Tensor, Var};

use super::{ComplexSpec, Real};
use crate::error::{Result, TseError};

/// Power-law magnitude compression `|X| -> |X|^beta`, phase kept.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DrcConfig {
    pub beta: f64,
}

impl Default for DrcConfig {
    fn default() -> Self {
        Self { beta: 0.5 }
    }
}

impl DrcConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(TseError::InvalidInput(format!("DRC exponent {beta} outside (0, 1]")));
        }
        Ok(Self { beta })
    }
}

/// Scales every complex bin of a `[re; im]` tensor by `|X|^(p - 1)`.
/// Zero bins stay zero (their phase is taken as 0).
pub(crate) fn power_law<S: Real>(data: &Tensor<S>, p: S) -> Tensor<S> {
    let half = data.len() / 2;
    let mut out = data.clone();
    let (re, im) = out.data_mut().split_at_mut(half);
    for (r, i) in re.iter_mut().zip(im.iter_mut()) {
        let m = r.hypot(*i);
        if m > S::zero() {
            let s = m.powf(p - S::one());
            *r *= s;
            *i *= s;
        } else {
            *r = S::zero();
            *i = S::zero();
        }
    }
    out
}

pub fn drc_compress<S: Real>(s: &ComplexSpec<S>, cfg: &DrcConfig) -> Result<ComplexSpec<S>> {
    if s.is_compressed() {
        return Err(TseError::InvalidState("spectrum is already compressed".into()));
    }
    let data = power_law(s.data(), lit(cfg.beta));
    ComplexSpec::from_parts(data, *s.config(), true, s.signal_len())
}

pub fn drc_expand<S: Real>(s: &ComplexSpec<S>, cfg: &DrcConfig) -> Result<ComplexSpec<S>> {
    if !s.is_compressed() {
        return Err(TseError::InvalidState("spectrum is not compressed".into()));
    }
    let data = power_law(s.data(), lit(1.0 / cfg.beta));
    ComplexSpec::from_parts(data, *s.config(), false, s.signal_len())
}

/// Differentiable expansion `z -> z |z|^(1/beta - 1)` on the tape.
pub struct DrcExpandOp {
    power: f64,
}

impl DrcExpandOp {
    pub fn apply<S: Real>(tape: &mut Tape<S>, x: Var, cfg: &DrcConfig) -> Var {
        let power = 1.0 / cfg.beta;
        let out = power_law(tape.value(x), lit(power));
        tape.custom(&[x], out, Box::new(DrcExpandOp { power }))
    }
}

impl<S: Real> CustomOp<S> for DrcExpandOp {
    fn name(&self) -> &'static str {
        "drc_expand"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let x = inputs[0];
        let half = x.len() / 2;
        let p: S = lit(self.power);
        let (xr, xi) = x.data().split_at(half);
        let (gr, gi) = grad.data().split_at(half);
        let mut out = vec![S::zero(); x.len()];
        for k in 0..half {
            let m = xr[k].hypot(xi[k]);
            if m == S::zero() {
                // d/dz (z |z|^(p-1)) at 0 is the identity for p == 1, zero for p > 1.
                if p == S::one() {
                    out[k] = gr[k];
                    out[half + k] = gi[k];
                }
                continue;
            }
            let s = m.powf(p - S::one());
            let kk = (p - S::one()) * s;
            let (u, v) = (xr[k] / m, xi[k] / m);
            out[k] = gr[k] * (s + kk * u * u) + gi[k] * kk * u * v;
            out[half + k] = gr[k] * kk * u * v + gi[k] * (s + kk * v * v);
        }
        vec![Some(Tensor::from_vec(x.shape(), out))]
    }
}
