//! Run configuration file with dotted-key overrides, and reproducibility stamps.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::StrategyName;
use crate::data::CorpusConfig;
use crate::dsp::{DrcConfig, StftConfig};
use crate::error::{Result, TseError};
use crate::nets::{BackboneConfig, DenoiserConfig};
use crate::pipeline::FrontendConfig;
use crate::train::{Stage, StageSpec, TrainPlan};

/// Revision of the source tree this binary was built from.
pub const REVISION: &str = match option_env!("LGTSE_REVISION") {
    Some(r) => r,
    None => "unknown",
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub strategy: StrategyName,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub grad_clip_l2: f64,
    pub identity_denoiser: bool,
    pub frontend: FrontendConfig,
    pub corpus: CorpusConfig,
    pub denoiser: DenoiserConfig,
    pub backbone: BackboneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let plan = TrainPlan::new(Stage::PretrainDenoiser, StrategyName::Base, 0);
        Self {
            seed: plan.seed,
            strategy: plan.strategy,
            epochs: plan.epochs,
            batch_size: plan.batch_size,
            lr0: plan.lr0,
            grad_clip_l2: plan.grad_clip_l2,
            identity_denoiser: false,
            frontend: FrontendConfig::default(),
            corpus: CorpusConfig::default(),
            denoiser: DenoiserConfig::default(),
            backbone: BackboneConfig::default(),
        }
    }
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` to a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| TseError::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(TseError::Config(format!("override key {key:?} is malformed")));
    }
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| TseError::Config(format!("override {key:?} descends into a non-table")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads an optional TOML file, applies overrides, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| TseError::ingest(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| TseError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| TseError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.frontend.stft;
        StftConfig::new(s.sample_rate, s.win_len, s.hop).map_err(|e| TseError::Config(e.to_string()))?;
        DrcConfig::new(self.frontend.drc.beta).map_err(|e| TseError::Config(e.to_string()))?;
        if self.corpus.sample_rate != s.sample_rate {
            return Err(TseError::Config(format!(
                "corpus sample rate {} differs from the STFT's {}",
                self.corpus.sample_rate, s.sample_rate
            )));
        }
        self.corpus.validate()?;
        self.denoiser.validate()?;
        self.backbone.validate()?;
        Ok(())
    }

    pub fn plan(&self, stage: Stage) -> TrainPlan {
        TrainPlan {
            lr0: self.lr0,
            epochs: self.epochs,
            batch_size: self.batch_size,
            grad_clip_l2: self.grad_clip_l2,
            identity_denoiser: self.identity_denoiser && stage == Stage::PretrainBackbone,
            ..TrainPlan::new(stage, self.strategy, self.seed)
        }
    }

    pub fn stage_spec(&self, stage: Stage) -> StageSpec {
        StageSpec {
            plan: self.plan(stage),
            frontend: self.frontend,
            denoiser: self.denoiser.clone(),
            backbone: self.backbone.clone(),
        }
    }

    /// SHA-256 over the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Written next to every output so a run can be traced back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub revision: String,
    pub version: String,
}

impl Stamp {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            revision: REVISION.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let json = serde_json::to_string_pretty(self).map_err(|e| TseError::Data(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| TseError::ingest(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::load(
            None,
            &[
                "seed=7".into(),
                "strategy=offline".into(),
                "denoiser.dprnn_layers=1".into(),
                "corpus.snr_noise_db=[-3.0, 0.0]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.strategy, StrategyName::Offline);
        assert_eq!(cfg.denoiser.dprnn_layers, 1);
        assert_eq!(cfg.corpus.snr_noise_db, (-3.0, 0.0));
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn toml_round_trip_and_errors() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(matches!(RunConfig::load(None, &["bogus=1".into()]), Err(TseError::Config(_))));
        assert!(matches!(RunConfig::load(None, &["seed".into()]), Err(TseError::Config(_))));
        assert!(matches!(
            RunConfig::load(None, &["frontend.stft.hop=100".into()]),
            Err(TseError::Config(_))
        ));
    }

    #[test]
    fn plan_follows_stage() {
        let cfg = RunConfig {
            identity_denoiser: true,
            ..RunConfig::default()
        };
        assert!(cfg.plan(Stage::PretrainBackbone).identity_denoiser);
        assert!(!cfg.plan(Stage::JointFinetune).identity_denoiser);
        assert!(cfg.plan(Stage::PretrainBackbone).freeze_denoiser);
    }
}
