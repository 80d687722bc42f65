//! Distortion-aware data usage: concatenation, on-the-fly twins and offline merging.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{ComplexSpec, Real, Waveform};
use crate::error::{Result, TseError};
use crate::guidance::{noise_agnostic_guidance, GuidanceFeature, SpecDenoiser, StackLayout};
use crate::manifest::{DatasetManifest, ManifestEntry, Provenance};
use crate::pipeline::Frontend;
use crate::wav::{read_wav, write_wav};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Base,
    Concat,
    OnTheFly,
    Offline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Plain,
    /// Every item is followed by its denoised twin.
    Enlarged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Original,
    Merged,
}

/// What a strategy changes: the input layout, the batch builder and the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub name: StrategyName,
    pub layout: StackLayout,
    pub batch: BatchMode,
    pub dataset: DatasetSource,
}

impl StrategyName {
    pub const ALL: [StrategyName; 4] = [
        StrategyName::Base,
        StrategyName::Concat,
        StrategyName::OnTheFly,
        StrategyName::Offline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::Base => "base",
            StrategyName::Concat => "concat",
            StrategyName::OnTheFly => "on_the_fly",
            StrategyName::Offline => "offline",
        }
    }

    pub fn descriptor(self) -> Strategy {
        let (layout, batch, dataset) = match self {
            StrategyName::Base => (StackLayout::BaseConcat, BatchMode::Plain, DatasetSource::Original),
            StrategyName::Concat => (StackLayout::DistortionConcat, BatchMode::Plain, DatasetSource::Original),
            StrategyName::OnTheFly => (StackLayout::BaseConcat, BatchMode::Enlarged, DatasetSource::Original),
            StrategyName::Offline => (StackLayout::BaseConcat, BatchMode::Plain, DatasetSource::Merged),
        };
        Strategy {
            name: self,
            layout,
            batch,
            dataset,
        }
    }
}

impl Strategy {
    /// Number of distortion mechanisms this strategy switches on (0 for base).
    pub fn active_mechanisms(&self) -> usize {
        usize::from(self.layout == StackLayout::DistortionConcat)
            + usize::from(self.batch == BatchMode::Enlarged)
            + usize::from(self.dataset == DatasetSource::Merged)
    }
}

pub fn select_strategy(name: &str) -> Result<Strategy> {
    StrategyName::ALL
        .iter()
        .find(|n| n.as_str() == name || (name == "on-the-fly" && **n == StrategyName::OnTheFly))
        .map(|n| n.descriptor())
        .ok_or_else(|| {
            TseError::Config(format!(
                "unknown strategy {name:?}; expected one of base, concat, on_the_fly, offline"
            ))
        })
}

/// One original example before guidance: compressed mixture, compressed
/// enrollment and the target waveform.
#[derive(Clone, Debug)]
pub struct SourceItem<S: Real> {
    pub mixture: ComplexSpec<S>,
    pub enrollment: ComplexSpec<S>,
    pub target: Arc<Waveform<S>>,
}

#[derive(Clone, Debug)]
pub struct TrainingItem<S: Real> {
    pub input: ComplexSpec<S>,
    pub guidance: Arc<GuidanceFeature<S>>,
    pub target: Arc<Waveform<S>>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug)]
pub struct TrainingBatch<S: Real> {
    pub items: Vec<TrainingItem<S>>,
}

/// Doubles a batch: each original is followed by its denoised twin, which
/// shares the original's guidance and target.
pub fn make_onthefly_batch<S: Real, D: SpecDenoiser<S> + ?Sized>(
    originals: &[SourceItem<S>],
    denoiser: &D,
) -> Result<TrainingBatch<S>> {
    let mut items = Vec::with_capacity(2 * originals.len());
    for o in originals {
        let (g, yd) = noise_agnostic_guidance(&o.enrollment, &o.mixture, denoiser)?;
        let g = Arc::new(g);
        items.push(TrainingItem {
            input: o.mixture.clone(),
            guidance: Arc::clone(&g),
            target: Arc::clone(&o.target),
            provenance: Provenance::Original,
        });
        items.push(TrainingItem {
            input: yd,
            guidance: g,
            target: Arc::clone(&o.target),
            provenance: Provenance::Denoised,
        });
    }
    Ok(TrainingBatch { items })
}

pub const OFFLINE_MANIFEST: &str = "manifest_offline.jsonl";

pub fn denoised_path(mixture: &str) -> String {
    match mixture.strip_suffix(".wav") {
        Some(stem) => format!("{stem}_denoised.wav"),
        None => format!("{mixture}_denoised.wav"),
    }
}

/// Denoises a whole dataset to disk, then merges and shuffles original and
/// denoised entries under `seed`. Writes `manifest_offline.jsonl` beside the
/// source manifest.
pub fn build_offline_dataset<S: Real, D: SpecDenoiser<S> + ?Sized>(
    dataset: &DatasetManifest,
    denoiser: &D,
    frontend: &Frontend<S>,
    seed: u64,
) -> Result<DatasetManifest> {
    let mut merged = dataset.entries.clone();
    for e in &dataset.entries {
        let path = dataset.resolve(&e.mixture);
        let mix: Waveform<S> = read_wav(&path)?;
        let y = frontend.analyze(&mix)?;
        let yd = denoiser.denoise(&y)?;
        if !yd.data().is_finite() {
            return Err(TseError::Data(format!("denoiser produced non-finite output for {}", e.id)));
        }
        let out = frontend.synthesize(&yd)?;
        let rel = denoised_path(&e.mixture);
        write_wav(&dataset.resolve(&rel), &out)?;
        merged.push(ManifestEntry {
            id: format!("{}_d", e.id),
            mixture: rel,
            provenance: Provenance::Denoised,
            ..e.clone()
        });
    }
    merged.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let manifest = DatasetManifest {
        entries: merged,
        base_dir: dataset.base_dir.clone(),
        seed: Some(seed),
    };
    manifest.write(&dataset.base_dir.join(OFFLINE_MANIFEST))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptors() {
        let c = select_strategy("concat").unwrap();
        assert_eq!(
            (c.layout, c.batch, c.dataset),
            (StackLayout::DistortionConcat, BatchMode::Plain, DatasetSource::Original)
        );
        let b = select_strategy("base").unwrap();
        assert_eq!(b.active_mechanisms(), 0);
        let o = select_strategy("offline").unwrap();
        assert_eq!(
            (o.layout, o.batch, o.dataset),
            (StackLayout::BaseConcat, BatchMode::Plain, DatasetSource::Merged)
        );
        for n in StrategyName::ALL.iter().skip(1) {
            assert_eq!(n.descriptor().active_mechanisms(), 1);
        }
        assert!(matches!(select_strategy("both"), Err(TseError::Config(_))));
    }

    #[test]
    fn denoised_suffix() {
        assert_eq!(denoised_path("mix/train_00001.wav"), "mix/train_00001_denoised.wav");
    }
}
