//! Waveform ↔ compressed-spectrum front end shared by training and inference.

use std::sync::Arc;

use tse_autograd::{Tape, Var};

use crate::dsp::{drc_compress, drc_expand, ComplexSpec, DrcConfig, DrcExpandOp, IstftOp, Real, StftConfig, StftEngine, Waveform};
use crate::error::Result;

/// Analysis settings shared by every model in a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub stft: StftConfig,
    pub drc: DrcConfig,
}

#[derive(Clone, Debug)]
pub struct Frontend<S: Real> {
    pub engine: Arc<StftEngine<S>>,
    pub drc: DrcConfig,
}

impl<S: Real> Frontend<S> {
    pub fn new(stft: StftConfig, drc: DrcConfig) -> Self {
        Self {
            engine: Arc::new(StftEngine::new(stft)),
            drc,
        }
    }

    pub fn from_config(cfg: &FrontendConfig) -> Self {
        Self::new(cfg.stft, cfg.drc)
    }

    pub fn config(&self) -> FrontendConfig {
        FrontendConfig {
            stft: *self.engine.config(),
            drc: self.drc,
        }
    }

    pub fn stft_config(&self) -> &StftConfig {
        self.engine.config()
    }

    /// STFT followed by magnitude compression.
    pub fn analyze(&self, w: &Waveform<S>) -> Result<ComplexSpec<S>> {
        drc_compress(&self.engine.stft(w)?, &self.drc)
    }

    /// Expansion followed by the inverse STFT.
    pub fn synthesize(&self, s: &ComplexSpec<S>) -> Result<Waveform<S>> {
        self.engine.istft(&drc_expand(s, &self.drc)?)
    }

    /// Differentiable [`Frontend::synthesize`] for a `(2F, T)` compressed spectrum.
    pub fn synthesize_on_tape(&self, t: &mut Tape<S>, spec: Var, len: usize) -> Var {
        let lin = DrcExpandOp::apply(t, spec, &self.drc);
        IstftOp::apply(t, &self.engine, lin, len)
    }
}
