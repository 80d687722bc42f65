//! Denoiser and backbone networks plus parameter accounting.

mod backbone;
mod denoiser;
pub mod layers;

use std::collections::BTreeMap;

use serde::Serialize;
use tse_autograd::{ParamStore, Scalar};

pub use backbone::{Backbone, BackboneConfig};
pub use denoiser::{bottleneck_bands, Denoiser, DenoiserConfig};

/// Parameter counts per top-level module.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub modules: BTreeMap<String, usize>,
    pub total: usize,
}

pub fn count_params<S: Scalar>(params: &ParamStore<S>) -> ParamReport {
    ParamReport {
        modules: params.count_by_module(),
        total: params.num_elements(),
    }
}
