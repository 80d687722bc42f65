//! Desk-scale system matrix: baseline, LGTSE, D-LGTSE (offline) and the
//! frozen-denoiser ablation, trained from one stage-1 denoiser per seed.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{build_offline_dataset, StrategyName};
use crate::data::Corpus;
use crate::error::{Result, TseError};
use crate::metrics::EvalReport;
use crate::nets::{BackboneConfig, DenoiserConfig};
use crate::pipeline::{Frontend, FrontendConfig};
use crate::train::{evaluate, run_stage, Checkpoint, Prior, RunOptions, Stage, StageSpec, TrainPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskConfig {
    pub denoiser_epochs: usize,
    pub backbone_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub frontend: FrontendConfig,
    pub denoiser: DenoiserConfig,
    pub backbone: BackboneConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            denoiser_epochs: 8,
            backbone_epochs: 16,
            finetune_epochs: 3,
            batch_size: 8,
            lr0: 5e-4,
            frontend: FrontendConfig::default(),
            // One dual-path layer keeps three seeds of the matrix near half an hour on one core.
            denoiser: DenoiserConfig {
                dprnn_layers: 1,
                ..DenoiserConfig::default()
            },
            backbone: BackboneConfig::default(),
        }
    }
}

/// Test-set SI-SDRi (dB) of each system for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Denoiser SI-SDR improvement against the clean two-speaker mixture.
    pub denoiser_gain: f64,
    /// Identity-denoiser baseline.
    pub e1: f64,
    /// LGTSE: denoised guidance, two-stage training.
    pub e2: f64,
    /// D-LGTSE offline: merged dataset, two-stage training.
    pub e5: f64,
    /// Offline strategy with the denoiser kept frozen (no fine-tuning).
    pub s1: f64,
    pub seconds: f64,
}

fn mean_sdri(r: &EvalReport) -> Result<f64> {
    if !r.skipped.is_empty() {
        return Err(TseError::Data(format!("{} evaluation skipped {} entries", r.system, r.skipped.len())));
    }
    r.mean_si_sdri().ok_or_else(|| TseError::Data(format!("{} evaluated no entries", r.system)))
}

impl DeskConfig {
    fn spec(&self, stage: Stage, strategy: StrategyName, seed: u64, epochs: usize) -> StageSpec {
        StageSpec {
            plan: TrainPlan {
                epochs,
                batch_size: self.batch_size,
                lr0: self.lr0,
                ..TrainPlan::new(stage, strategy, seed)
            },
            frontend: self.frontend,
            denoiser: self.denoiser.clone(),
            backbone: self.backbone.clone(),
        }
    }
}

/// Trains and scores every system of the matrix for one seed. Checkpoints
/// go to `work_dir`; the offline dataset is written beside the training split.
pub fn run_seed(corpus: &Corpus, cfg: &DeskConfig, seed: u64, work_dir: &Path) -> Result<SeedResult> {
    let clock = Instant::now();
    let (train, dev, test) = (&corpus.train, Some(&corpus.dev), &corpus.test);
    let opts = |name: &str| RunOptions {
        checkpoint_path: Some(work_dir.join(format!("seed{seed}_{name}.ckpt"))),
        stop_after: None,
    };
    let step = |what: &str| log::info!("seed {seed}: {what} ({:.0} s elapsed)", clock.elapsed().as_secs_f64());

    step("stage-1 denoiser");
    let den = run_stage(
        &cfg.spec(Stage::PretrainDenoiser, StrategyName::Base, seed, cfg.denoiser_epochs),
        train,
        dev,
        &Prior::default(),
        &opts("denoiser"),
    )?;
    let denoiser_gain = mean_sdri(&evaluate(&den, test)?)?;

    step("baseline");
    let mut e1_spec = cfg.spec(
        Stage::PretrainBackbone,
        StrategyName::Base,
        seed,
        cfg.backbone_epochs + cfg.finetune_epochs,
    );
    e1_spec.plan.identity_denoiser = true;
    let e1 = run_stage(&e1_spec, train, dev, &Prior::default(), &opts("e1"))?;
    let e1 = mean_sdri(&evaluate(&e1, test)?)?;

    let with_denoiser = Prior {
        denoiser: Some(den.clone()),
        ..Prior::default()
    };
    let finetune = |pre: &Checkpoint, strategy: StrategyName, data: &crate::manifest::DatasetManifest, name: &str| -> Result<Checkpoint> {
        run_stage(
            &cfg.spec(Stage::JointFinetune, strategy, seed, cfg.finetune_epochs),
            data,
            dev,
            &Prior {
                denoiser: Some(den.clone()),
                backbone: Some(pre.clone()),
                resume: None,
            },
            &opts(name),
        )
    };

    step("LGTSE");
    let e2_pre = run_stage(
        &cfg.spec(Stage::PretrainBackbone, StrategyName::Base, seed, cfg.backbone_epochs),
        train,
        dev,
        &with_denoiser,
        &opts("e2_pretrain"),
    )?;
    let e2 = mean_sdri(&evaluate(&finetune(&e2_pre, StrategyName::Base, train, "e2")?, test)?)?;

    step("offline dataset");
    let den_model = den.denoiser.as_ref().expect("stage 1 returns a denoiser");
    let merged = build_offline_dataset(train, den_model, &Frontend::<f32>::from_config(&cfg.frontend), seed)?;
    step("frozen-denoiser offline");
    let s1_ck = run_stage(
        &cfg.spec(Stage::PretrainBackbone, StrategyName::Offline, seed, cfg.backbone_epochs),
        &merged,
        dev,
        &with_denoiser,
        &opts("s1"),
    )?;
    let s1 = mean_sdri(&evaluate(&s1_ck, test)?)?;
    step("D-LGTSE offline");
    let e5 = mean_sdri(&evaluate(&finetune(&s1_ck, StrategyName::Offline, &merged, "e5")?, test)?)?;

    Ok(SeedResult {
        seed,
        denoiser_gain,
        e1,
        e2,
        e5,
        s1,
        seconds: clock.elapsed().as_secs_f64(),
    })
}
