use std::fs;
use std::path::Path;

use lgtse::data::{
    build_corpus, generate_example, mix_minimum, snr_db, synth_noise, synth_utterance, Corpus, CorpusConfig, NoiseKind,
    SourceBank, Split,
};
use lgtse::dsp::Waveform;
use lgtse::error::TseError;
use lgtse::wav::{read_wav, write_wav};
use proptest::prelude::*;

fn small() -> CorpusConfig {
    CorpusConfig {
        n_train: 8,
        n_dev: 3,
        n_test: 3,
        speakers_train: 3,
        speakers_dev: 2,
        speakers_test: 2,
        utterances_per_speaker: 3,
        ..CorpusConfig::default()
    }
}

fn residual(ex: &lgtse::data::MixtureExample) -> f64 {
    ex.mixture
        .samples()
        .iter()
        .zip(ex.target.samples())
        .zip(ex.interferer.samples().iter().zip(ex.noise.samples()))
        .map(|((m, t), (i, n))| (m - t - i - n).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn mixing_snrs_and_lengths(
        si in -10.0f64..10.0,
        sn in -10.0f64..10.0,
        lens in (4000usize..12000, 4000usize..12000, 4000usize..12000),
        seed in 0u64..1000,
    ) {
        let t = synth_utterance(seed, 1, lens.0 as f64 / 8000.0, 8000);
        let i = synth_utterance(seed + 1, 2, lens.1 as f64 / 8000.0, 8000);
        let n = synth_noise(NoiseKind::Pink, seed, lens.2, 8000);
        let ex = mix_minimum(&t, &i, &n, si, sn).unwrap();
        let len = t.len().min(i.len()).min(n.len());
        for w in [&ex.target, &ex.interferer, &ex.noise, &ex.mixture, &ex.clean_mixture] {
            prop_assert_eq!(w.len(), len);
        }
        prop_assert!((snr_db(ex.target.samples(), ex.interferer.samples()) - si).abs() < 0.01);
        prop_assert!((snr_db(ex.clean_mixture.samples(), ex.noise.samples()) - sn).abs() < 0.01);
        prop_assert!(residual(&ex) < 1e-10);
    }
}

#[test]
fn generated_examples_hit_requested_snrs() {
    let cfg = small();
    let bank = SourceBank::synthetic(&cfg).unwrap();
    for split in Split::ALL {
        for i in 0..cfg.count(split) {
            let (ex, _) = generate_example(&bank, &cfg, split, i).unwrap();
            assert!((snr_db(ex.target.samples(), ex.interferer.samples()) - ex.snr_interferer_db).abs() < 0.01);
            assert!((snr_db(ex.clean_mixture.samples(), ex.noise.samples()) - ex.snr_noise_db).abs() < 0.01);
            assert!(residual(&ex) < 1e-10);
            assert!(ex.peak() <= 0.95);
        }
    }
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn corpus_is_byte_identical_across_runs() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_corpus(&SourceBank::synthetic(&cfg).unwrap(), &cfg, a.path()).unwrap();
    build_corpus(&SourceBank::synthetic(&cfg).unwrap(), &cfg, b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 5 * (8 + 3 + 3) + 3);
    assert_eq!(fa, fb);
    let loaded = Corpus::load(a.path()).unwrap();
    assert_eq!(loaded.train.len(), 8);
    assert_eq!(loaded.split(Split::Test).len(), 3);

    let other = CorpusConfig { seed: 1, ..cfg };
    let c = tempfile::tempdir().unwrap();
    build_corpus(&SourceBank::synthetic(&other).unwrap(), &other, c.path()).unwrap();
    assert_ne!(files(c.path()), fa);
}

#[test]
fn real_audio_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    for spk in 0..7u64 {
        for u in 0..3u64 {
            let w = synth_utterance(spk, u, 1.2, 8000);
            write_wav(&dir.path().join(format!("s{spk}/u{u}.wav")), &w).unwrap();
        }
    }
    let bank = SourceBank::from_directory(dir.path(), &small()).unwrap();
    assert_eq!((bank.train.len(), bank.dev.len(), bank.test.len()), (3, 2, 2));
    assert_eq!(bank.train[0].utterances[0].0, "s0_u0");
    let (ex, _) = generate_example(&bank, &small(), Split::Dev, 0).unwrap();
    assert!(ex.target_speaker == "s3" || ex.target_speaker == "s4");

    let few = CorpusConfig { speakers_train: 10, ..small() };
    assert!(matches!(SourceBank::from_directory(dir.path(), &few), Err(TseError::Config(_))));
}

#[test]
fn wav_round_trip_below_minus_80_db() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let w = synth_utterance(5, 6, 1.0, 8000).scaled(0.8);
    write_wav(&path, &w).unwrap();
    let back: Waveform<f64> = read_wav(&path).unwrap();
    let err: f64 = back.samples().iter().zip(w.samples()).map(|(a, b)| (a - b).powi(2)).sum();
    let db = 10.0 * (err / w.energy()).log10();
    assert!(db < -80.0, "{db} dB");
}
