//! Versioned checkpoint container: a JSON header plus little-endian f32
//! tensors in safetensors layout.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use tse_autograd::{Adam, ParamStore, Tensor};

use super::{Stage, TrainPlan};
use crate::error::{Result, TseError};
use crate::nets::{Backbone, BackboneConfig, Denoiser, DenoiserConfig};
use crate::pipeline::FrontendConfig;

pub const CHECKPOINT_FORMAT: &str = "lgtse-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_KEY: &str = "lgtse";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's examples.
    pub train_loss: f64,
    /// Mean dev SI-SDR (dB) after the epoch, when a dev set is given.
    pub dev_si_sdr: Option<f64>,
    /// Global gradient norm before and after clipping, per optimizer step.
    pub grad_norms: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn capture(adam: &Adam<f32>) -> Self {
        let (step, m, v) = adam.state();
        Self {
            step,
            m: m.to_vec(),
            v: v.to_vec(),
        }
    }

    pub fn restore(&self) -> Adam<f32> {
        Adam::from_state(self.step, self.m.clone(), self.v.clone())
    }
}

/// Everything needed to resume a stage or run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub plan: TrainPlan,
    pub frontend: FrontendConfig,
    pub denoiser: Option<Denoiser<f32>>,
    pub backbone: Option<Backbone<f32>>,
    pub denoiser_opt: Option<AdamState>,
    pub backbone_opt: Option<AdamState>,
    /// Completed epochs.
    pub epoch: usize,
    /// Learning rate of the last completed epoch.
    pub lr: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    stage: Stage,
    plan: TrainPlan,
    frontend: FrontendConfig,
    denoiser: Option<DenoiserConfig>,
    backbone: Option<BackboneConfig>,
    denoiser_opt_step: Option<u64>,
    backbone_opt_step: Option<u64>,
    epoch: usize,
    lr: f64,
    history: Vec<EpochRecord>,
}

fn to_bytes(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn incompatible(msg: impl Into<String>) -> TseError {
    TseError::Config(format!("incompatible checkpoint: {}", msg.into()))
}

fn read_tensor(st: &SafeTensors, name: &str, shape: &[usize]) -> Result<Tensor<f32>> {
    let view = st.tensor(name).map_err(|_| incompatible(format!("missing tensor {name}")))?;
    if view.dtype() != Dtype::F32 || view.shape() != shape {
        return Err(incompatible(format!(
            "tensor {name} has shape {:?}, expected {shape:?}",
            view.shape()
        )));
    }
    let data = view
        .data()
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Tensor::from_vec(shape, data))
}

fn load_params(st: &SafeTensors, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
    let ids: Vec<_> = store.iter().map(|(id, name, t)| (id, name.to_string(), t.shape().to_vec())).collect();
    for (id, name, shape) in ids {
        *store.get_mut(id) = read_tensor(st, &format!("{prefix}/{name}"), &shape)?;
    }
    Ok(())
}

fn load_adam(st: &SafeTensors, prefix: &str, step: u64, store: &ParamStore<f32>) -> Result<AdamState> {
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (i, (_, _, t)) in store.iter().enumerate() {
        m.push(read_tensor(st, &format!("{prefix}/m/{i:05}"), t.shape())?);
        v.push(read_tensor(st, &format!("{prefix}/v/{i:05}"), t.shape())?);
    }
    Ok(AdamState { step, m, v })
}

impl Checkpoint {
    pub fn stage(&self) -> Stage {
        self.plan.stage
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            stage: self.plan.stage,
            plan: self.plan.clone(),
            frontend: self.frontend,
            denoiser: self.denoiser.as_ref().map(|d| d.config().clone()),
            backbone: self.backbone.as_ref().map(|b| b.config().clone()),
            denoiser_opt_step: self.denoiser_opt.as_ref().map(|s| s.step),
            backbone_opt_step: self.backbone_opt.as_ref().map(|s| s.step),
            epoch: self.epoch,
            lr: self.lr,
            history: self.history.clone(),
        };
        let header = serde_json::to_string(&header).map_err(|e| TseError::Data(e.to_string()))?;

        let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        let mut push_store = |prefix: &str, store: &ParamStore<f32>, opt: Option<&AdamState>| {
            for (_, name, t) in store.iter() {
                owned.push((format!("{prefix}/{name}"), t.shape().to_vec(), to_bytes(t)));
            }
            if let Some(s) = opt {
                for (i, (m, v)) in s.m.iter().zip(&s.v).enumerate() {
                    owned.push((format!("{prefix}_opt/m/{i:05}"), m.shape().to_vec(), to_bytes(m)));
                    owned.push((format!("{prefix}_opt/v/{i:05}"), v.shape().to_vec(), to_bytes(v)));
                }
            }
        };
        if let Some(d) = &self.denoiser {
            push_store("denoiser", &d.params, self.denoiser_opt.as_ref());
        }
        if let Some(b) = &self.backbone {
            push_store("backbone", &b.params, self.backbone_opt.as_ref());
        }
        let views = owned
            .iter()
            .map(|(name, shape, bytes)| {
                TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| TseError::Data(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = HashMap::from([(HEADER_KEY.to_string(), header)]);
        safetensors::tensor::serialize(views, &Some(meta)).map_err(|e| TseError::Data(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| TseError::Data(format!("unreadable checkpoint: {reason}"));
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| bad(e.to_string()))?;
        let header = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get(HEADER_KEY))
            .ok_or_else(|| bad("no header".into()))?;
        let h: Header = serde_json::from_str(header).map_err(|e| bad(e.to_string()))?;
        if h.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("format {:?}", h.format)));
        }
        if h.version != CHECKPOINT_VERSION {
            return Err(incompatible(format!("version {} (expected {CHECKPOINT_VERSION})", h.version)));
        }
        let st = SafeTensors::deserialize(bytes).map_err(|e| bad(e.to_string()))?;

        let mut denoiser_opt = None;
        let denoiser = match h.denoiser {
            Some(cfg) => {
                let mut d = Denoiser::new(cfg, h.frontend.stft, 0)?;
                load_params(&st, "denoiser", &mut d.params)?;
                if let Some(step) = h.denoiser_opt_step {
                    denoiser_opt = Some(load_adam(&st, "denoiser_opt", step, &d.params)?);
                }
                Some(d)
            }
            None => None,
        };
        let mut backbone_opt = None;
        let backbone = match h.backbone {
            Some(cfg) => {
                let mut b = Backbone::new(cfg, 0)?;
                load_params(&st, "backbone", &mut b.params)?;
                if let Some(step) = h.backbone_opt_step {
                    backbone_opt = Some(load_adam(&st, "backbone_opt", step, &b.params)?);
                }
                Some(b)
            }
            None => None,
        };
        Ok(Self {
            plan: h.plan,
            frontend: h.frontend,
            denoiser,
            backbone,
            denoiser_opt,
            backbone_opt,
            epoch: h.epoch,
            lr: h.lr,
            history: h.history,
        })
    }

    /// Writes atomically through a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| TseError::ingest(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| TseError::ingest(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| TseError::ingest(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| TseError::ingest(path, e))?;
        Self::from_bytes(&bytes)
    }
}
