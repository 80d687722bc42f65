use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mix::{mix_minimum, MixtureExample};
use super::synth::{synth_noise, synth_utterance, NoiseKind};
use crate::dsp::Waveform;
use crate::error::{Result, TseError};
use crate::manifest::{DatasetManifest, ManifestEntry, Provenance};
use crate::wav::{read_wav, write_wav};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub speakers_train: usize,
    pub speakers_dev: usize,
    pub speakers_test: usize,
    pub utterances_per_speaker: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub snr_interferer_db: (f64, f64),
    pub snr_noise_db: (f64, f64),
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 240,
            n_dev: 40,
            n_test: 40,
            speakers_train: 12,
            speakers_dev: 4,
            speakers_test: 4,
            utterances_per_speaker: 6,
            min_duration: 1.0,
            max_duration: 2.0,
            snr_interferer_db: (-5.0, 5.0),
            snr_noise_db: (-6.0, 3.0),
            sample_rate: 8000,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Dev => self.n_dev,
            Split::Test => self.n_test,
        }
    }

    fn speakers(&self, split: Split) -> usize {
        match split {
            Split::Train => self.speakers_train,
            Split::Dev => self.speakers_dev,
            Split::Test => self.speakers_test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("snr_interferer_db", self.snr_interferer_db), ("snr_noise_db", self.snr_noise_db)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(TseError::Config(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        if !(0.5 <= self.min_duration && self.min_duration <= self.max_duration) {
            return Err(TseError::Config("utterance durations must satisfy 0.5 <= min <= max".into()));
        }
        if self.utterances_per_speaker < 2 {
            return Err(TseError::Config("need at least 2 utterances per speaker".into()));
        }
        for s in Split::ALL {
            if self.count(s) > 0 && self.speakers(s) < 2 {
                return Err(TseError::Config(format!("{} split needs at least 2 speakers", s.name())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SpeakerPool {
    pub id: String,
    pub utterances: Vec<(String, Waveform<f64>)>,
}

/// Speaker utterance pools partitioned into disjoint splits.
#[derive(Clone, Debug)]
pub struct SourceBank {
    pub train: Vec<SpeakerPool>,
    pub dev: Vec<SpeakerPool>,
    pub test: Vec<SpeakerPool>,
    pub sample_rate: u32,
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243F_6A88_85A3_08D3u64, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

impl SourceBank {
    pub fn pools(&self, split: Split) -> &[SpeakerPool] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Synthetic speakers; ids are globally unique across splits.
    pub fn synthetic(cfg: &CorpusConfig) -> Result<Self> {
        cfg.validate()?;
        let mut next = 0usize;
        let mut make = |n: usize| -> Vec<SpeakerPool> {
            (0..n)
                .map(|_| {
                    let spk = next;
                    next += 1;
                    let spk_seed = mix_seed(&[cfg.seed, 1, spk as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(spk_seed);
                    let utterances = (0..cfg.utterances_per_speaker)
                        .map(|u| {
                            let dur = rng.random_range(cfg.min_duration..=cfg.max_duration);
                            let wave = synth_utterance(spk_seed, u as u64, dur, cfg.sample_rate);
                            (format!("spk{spk:03}_utt{u:02}"), wave)
                        })
                        .collect();
                    SpeakerPool {
                        id: format!("spk{spk:03}"),
                        utterances,
                    }
                })
                .collect()
        };
        let train = make(cfg.speakers_train);
        let dev = make(cfg.speakers_dev);
        let test = make(cfg.speakers_test);
        Ok(Self {
            train,
            dev,
            test,
            sample_rate: cfg.sample_rate,
        })
    }

    /// Real audio laid out as `<dir>/<speaker>/<utterance>.wav`. Speakers are
    /// taken in sorted order: train first, then dev, then test.
    pub fn from_directory(dir: &Path, cfg: &CorpusConfig) -> Result<Self> {
        cfg.validate()?;
        let mut speakers: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| TseError::ingest(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        speakers.sort();
        let needed = cfg.speakers_train + cfg.speakers_dev + cfg.speakers_test;
        if speakers.len() < needed {
            return Err(TseError::Config(format!(
                "{} has {} speaker directories, {needed} required",
                dir.display(),
                speakers.len()
            )));
        }
        let mut pools = Vec::new();
        for spk in speakers.iter().take(needed) {
            let mut files: Vec<PathBuf> = fs::read_dir(spk)
                .map_err(|e| TseError::ingest(spk, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "wav"))
                .collect();
            files.sort();
            let id = spk.file_name().unwrap().to_string_lossy().into_owned();
            if files.len() < 2 {
                return Err(TseError::Config(format!("speaker {id} has fewer than 2 utterances")));
            }
            let mut utterances = Vec::new();
            for f in files {
                let w: Waveform<f64> = read_wav(&f)?;
                if w.sample_rate() != cfg.sample_rate {
                    return Err(TseError::ingest(
                        &f,
                        format!("sample rate {} differs from {}", w.sample_rate(), cfg.sample_rate),
                    ));
                }
                let name = format!("{id}_{}", f.file_stem().unwrap().to_string_lossy());
                utterances.push((name, w));
            }
            pools.push(SpeakerPool { id, utterances });
        }
        let test = pools.split_off(cfg.speakers_train + cfg.speakers_dev);
        let dev = pools.split_off(cfg.speakers_train);
        Ok(Self {
            train: pools,
            dev,
            test,
            sample_rate: cfg.sample_rate,
        })
    }
}

pub fn example_id(split: Split, index: usize) -> String {
    format!("{}_{index:05}", split.name())
}

/// Generates one example; a pure function of `(bank, cfg, split, index)`.
pub fn generate_example(bank: &SourceBank, cfg: &CorpusConfig, split: Split, index: usize) -> Result<(MixtureExample, u64)> {
    let pools = bank.pools(split);
    if pools.len() < 2 {
        return Err(TseError::Config(format!("{} split needs at least 2 speakers", split.name())));
    }
    let seed = mix_seed(&[cfg.seed, 2, split.index(), index as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts = rng.random_range(0..pools.len());
    let target_pool = &pools[ts];
    let nu = target_pool.utterances.len();
    if nu < 2 {
        return Err(TseError::Config(format!("speaker {} has fewer than 2 utterances", target_pool.id)));
    }
    let tu = rng.random_range(0..nu);
    let eu = (tu + rng.random_range(1..nu)) % nu;
    let is = (ts + rng.random_range(1..pools.len())) % pools.len();
    let inter_pool = &pools[is];
    let iu = rng.random_range(0..inter_pool.utterances.len());
    let target = &target_pool.utterances[tu].1;
    let interferer = &inter_pool.utterances[iu].1;
    let kind = if rng.random_bool(0.5) { NoiseKind::Pink } else { NoiseKind::Babble };
    let noise = synth_noise(kind, rng.random(), target.len().max(interferer.len()), bank.sample_rate);
    let snr_i = rng.random_range(cfg.snr_interferer_db.0..=cfg.snr_interferer_db.1);
    let snr_n = rng.random_range(cfg.snr_noise_db.0..=cfg.snr_noise_db.1);
    let mut ex = mix_minimum(target, interferer, &noise, snr_i, snr_n)?;
    // Keep every stored file inside the 16-bit range.
    let peak = ex.peak();
    if peak > 0.95 {
        ex = ex.rescaled(0.9 / peak);
    }
    ex.enrollment = Some(target_pool.utterances[eu].1.clone());
    ex.target_speaker = target_pool.id.clone();
    ex.target_utterance = target_pool.utterances[tu].0.clone();
    ex.enrollment_utterance = target_pool.utterances[eu].0.clone();
    ex.interferer_speaker = inter_pool.id.clone();
    Ok((ex, seed))
}

/// Per-split manifests produced by [`build_corpus`].
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: DatasetManifest,
    pub dev: DatasetManifest,
    pub test: DatasetManifest,
}

impl Corpus {
    pub fn manifest_path(root: &Path, split: Split) -> PathBuf {
        root.join(split.name()).join("manifest.jsonl")
    }

    pub fn split(&self, split: Split) -> &DatasetManifest {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn load(root: &Path) -> Result<Self> {
        Ok(Self {
            train: DatasetManifest::read(&Self::manifest_path(root, Split::Train))?,
            dev: DatasetManifest::read(&Self::manifest_path(root, Split::Dev))?,
            test: DatasetManifest::read(&Self::manifest_path(root, Split::Test))?,
        })
    }
}

/// Writes all three splits under `root` and returns their manifests.
pub fn build_corpus(bank: &SourceBank, cfg: &CorpusConfig, root: &Path) -> Result<Corpus> {
    cfg.validate()?;
    let mut out = Vec::new();
    for split in Split::ALL {
        let dir = root.join(split.name());
        let mut manifest = DatasetManifest::new(&dir);
        for i in 0..cfg.count(split) {
            let (ex, seed) = generate_example(bank, cfg, split, i)?;
            let id = example_id(split, i);
            let rel = |kind: &str| format!("{kind}/{id}.wav");
            write_wav(&dir.join(rel("mix")), &ex.mixture)?;
            write_wav(&dir.join(rel("clean_mix")), &ex.clean_mixture)?;
            write_wav(&dir.join(rel("target")), &ex.target)?;
            write_wav(&dir.join(rel("enroll")), ex.enrollment.as_ref().unwrap())?;
            write_wav(&dir.join(rel("noise")), &ex.noise)?;
            manifest.entries.push(ManifestEntry {
                id: id.clone(),
                mixture: rel("mix"),
                enrollment: rel("enroll"),
                target: rel("target"),
                clean_mix: rel("clean_mix"),
                provenance: Provenance::Original,
                snr_db_noise: ex.snr_noise_db,
                snr_db_interferer: ex.snr_interferer_db,
                seed,
            });
        }
        manifest.write(&Corpus::manifest_path(root, split))?;
        out.push(manifest);
    }
    let test = out.pop().unwrap();
    let dev = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok(Corpus { train, dev, test })
}
