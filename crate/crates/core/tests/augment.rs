use std::collections::HashSet;
use std::fs;
use std::sync::Arc;

use lgtse::augment::{
    build_offline_dataset, make_onthefly_batch, select_strategy, BatchMode, DatasetSource, SourceItem, StrategyName,
    OFFLINE_MANIFEST,
};
use lgtse::data::{build_corpus, CorpusConfig, SourceBank};
use lgtse::dsp::StftConfig;
use lgtse::guidance::{context_interaction, StackLayout};
use lgtse::manifest::{DatasetManifest, Provenance};
use lgtse::nets::{Denoiser, DenoiserConfig};
use lgtse::pipeline::Frontend;
use lgtse::wav::read_wav;
use proptest::prelude::*;

fn small() -> CorpusConfig {
    CorpusConfig {
        n_train: 6,
        n_dev: 2,
        n_test: 2,
        speakers_train: 3,
        speakers_dev: 2,
        speakers_test: 2,
        utterances_per_speaker: 3,
        max_duration: 1.2,
        ..CorpusConfig::default()
    }
}

fn denoiser() -> Denoiser<f32> {
    Denoiser::new(DenoiserConfig::default(), StftConfig::default(), 3).unwrap()
}

fn items(m: &DatasetManifest, fe: &Frontend<f32>) -> Vec<SourceItem<f32>> {
    m.entries
        .iter()
        .map(|e| SourceItem {
            mixture: fe.analyze(&read_wav(&m.resolve(&e.mixture)).unwrap()).unwrap(),
            enrollment: fe.analyze(&read_wav(&m.resolve(&e.enrollment)).unwrap()).unwrap(),
            target: Arc::new(read_wav(&m.resolve(&e.target)).unwrap()),
        })
        .collect()
}

#[test]
fn on_the_fly_batch_doubles_with_paired_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = build_corpus(&SourceBank::synthetic(&small()).unwrap(), &small(), dir.path()).unwrap();
    let fe = Frontend::<f32>::from_config(&Default::default());
    let originals = items(&corpus.train, &fe);
    let d = denoiser();
    for n in 1..=originals.len() {
        let batch = make_onthefly_batch(&originals[..n], &d).unwrap();
        assert_eq!(batch.items.len(), 2 * n);
        for (k, pair) in batch.items.chunks(2).enumerate() {
            let (orig, twin) = (&pair[0], &pair[1]);
            assert_eq!((orig.provenance, twin.provenance), (Provenance::Original, Provenance::Denoised));
            assert_eq!(orig.input.data().data(), originals[k].mixture.data().data());
            assert!(Arc::ptr_eq(&orig.target, &twin.target));
            assert!(Arc::ptr_eq(&orig.guidance, &twin.guidance));
            assert_eq!(twin.input.data().shape(), orig.input.data().shape());
            assert_ne!(twin.input.data().data(), orig.input.data().data());
        }
    }
    // The twin's guidance is the interaction with the denoised mixture.
    let batch = make_onthefly_batch(&originals[..1], &d).unwrap();
    let expect = context_interaction(&originals[0].enrollment, &batch.items[1].input).unwrap();
    assert_eq!(batch.items[0].guidance.data.data(), expect.data.data());
}

#[test]
fn offline_dataset_doubles_and_reshuffles_deterministically() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fe = Frontend::<f32>::from_config(&Default::default());
    let d = denoiser();
    let mut runs = Vec::new();
    for root in [a.path(), b.path()] {
        let corpus = build_corpus(&SourceBank::synthetic(&small()).unwrap(), &small(), root).unwrap();
        let merged = build_offline_dataset(&corpus.train, &d, &fe, 42).unwrap();
        assert_eq!(merged.len(), 2 * corpus.train.len());
        let ids: HashSet<_> = merged.entries.iter().map(|e| e.id.clone()).collect();
        assert_eq!(ids.len(), merged.len());
        let denoised = merged.entries.iter().filter(|e| e.provenance == Provenance::Denoised).count();
        assert_eq!(denoised, corpus.train.len());
        for e in merged.entries.iter().filter(|e| e.provenance == Provenance::Denoised) {
            let orig = corpus.train.entries.iter().find(|o| format!("{}_d", o.id) == e.id).unwrap();
            assert_eq!((&e.target, &e.enrollment, &e.clean_mix), (&orig.target, &orig.enrollment, &orig.clean_mix));
        }
        let path = root.join("train").join(OFFLINE_MANIFEST);
        let reread = DatasetManifest::read(&path).unwrap();
        assert_eq!(reread.entries, merged.entries);
        let wavs: Vec<Vec<u8>> = merged
            .entries
            .iter()
            .filter(|e| e.provenance == Provenance::Denoised)
            .map(|e| fs::read(merged.resolve(&e.mixture)).unwrap())
            .collect();
        runs.push((fs::read(&path).unwrap(), wavs, corpus.train.clone()));
    }
    assert_eq!(runs[0].0, runs[1].0);
    assert_eq!(runs[0].1, runs[1].1);

    // A different seed gives a different order over the same entries.
    let other = build_offline_dataset(&runs[0].2, &d, &fe, 43).unwrap();
    let first = DatasetManifest::read(&a.path().join("train").join(OFFLINE_MANIFEST)).unwrap();
    assert_eq!(other.seed, Some(43));
    let mut x: Vec<_> = other.entries.iter().map(|e| e.id.clone()).collect();
    let mut y: Vec<_> = DatasetManifest::read(&b.path().join("train").join(OFFLINE_MANIFEST))
        .unwrap()
        .entries
        .iter()
        .map(|e| e.id.clone())
        .collect();
    assert_ne!(x, y);
    x.sort();
    y.sort();
    assert_eq!(x, y);
    assert_eq!(first.len(), other.len());
}

#[test]
fn strategies_are_mutually_exclusive() {
    let all: Vec<_> = StrategyName::ALL.iter().map(|n| n.descriptor()).collect();
    for (i, a) in all.iter().enumerate() {
        for b in &all[i + 1..] {
            assert_ne!((a.layout, a.batch, a.dataset), (b.layout, b.batch, b.dataset));
        }
        assert!(a.active_mechanisms() <= 1);
        assert_eq!(select_strategy(a.name.as_str()).unwrap(), *a);
    }
    let concat = StrategyName::Concat.descriptor();
    assert_eq!(concat.layout, StackLayout::DistortionConcat);
    assert_eq!(StrategyName::OnTheFly.descriptor().batch, BatchMode::Enlarged);
    assert_eq!(StrategyName::Offline.descriptor().dataset, DatasetSource::Merged);
    assert_eq!(select_strategy("on-the-fly").unwrap().name, StrategyName::OnTheFly);
}

proptest! {
    #[test]
    fn unknown_strategy_names_rejected(name in "[a-z_]{1,12}") {
        let known = ["base", "concat", "on_the_fly", "offline"];
        prop_assert_eq!(select_strategy(&name).is_ok(), known.contains(&name.as_str()));
    }
}
