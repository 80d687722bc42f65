//! Desk-scale synthesis of target + interferer + noise mixtures.

mod corpus;
mod mix;
mod synth;

pub use corpus::{
    build_corpus, example_id, generate_example, mix_seed, Corpus, CorpusConfig, SourceBank, SpeakerPool, Split,
};
pub use mix::{mix_minimum, snr_db, MixtureExample};
pub use synth::{synth_noise, synth_speaker_signal, synth_utterance, NoiseKind, Voice};
