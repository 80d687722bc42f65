use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

/// Environment variable naming an external PESQ scorer. The program is run as
/// `<bin> <reference.wav> <estimate.wav> <sample_rate>` and the last number on
/// its stdout is taken as the score.
pub const PESQ_ENV: &str = "LGTSE_PESQ_BIN";

/// Runs the external PESQ scorer if one is configured.
pub fn external_pesq(reference: &Path, estimate: &Path, sample_rate: u32) -> Option<f64> {
    let bin = std::env::var_os(PESQ_ENV)?;
    let out = Command::new(bin)
        .arg(reference)
        .arg(estimate)
        .arg(sample_rate.to_string())
        .output()
        .ok()?;
    if !out.status.success() {
        log::warn!("PESQ scorer exited with {}", out.status);
        return None;
    }
    String::from_utf8_lossy(&out.stdout)
        .split_whitespace()
        .rev()
        .find_map(|tok| tok.parse::<f64>().ok())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub id: String,
    pub si_sdr: f64,
    pub si_sdri: f64,
    pub stoi: Option<f64>,
    pub pesq: Option<f64>,
}

/// Per-utterance scores plus corpus means.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub utterances: Vec<UtteranceScore>,
    /// `(id, reason)` for utterances that could not be scored.
    pub skipped: Vec<(String, String)>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn new(system: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            ..Self::default()
        }
    }

    pub fn mean_si_sdr(&self) -> Option<f64> {
        mean(self.utterances.iter().map(|u| u.si_sdr))
    }

    pub fn mean_si_sdri(&self) -> Option<f64> {
        mean(self.utterances.iter().map(|u| u.si_sdri))
    }

    pub fn mean_stoi(&self) -> Option<f64> {
        mean(self.utterances.iter().filter_map(|u| u.stoi))
    }

    /// Mean PESQ, only when every utterance has a score.
    pub fn mean_pesq(&self) -> Option<f64> {
        if self.utterances.iter().any(|u| u.pesq.is_none()) {
            return None;
        }
        mean(self.utterances.iter().filter_map(|u| u.pesq))
    }

    /// Flat `key = value` summary.
    pub fn summary(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        let _ = writeln!(s, "system = {}", self.system);
        let _ = writeln!(s, "utterances = {}", self.utterances.len());
        let _ = writeln!(s, "skipped = {}", self.skipped.len());
        let _ = writeln!(s, "si_sdr = {}", fmt(self.mean_si_sdr()));
        let _ = writeln!(s, "si_sdri = {}", fmt(self.mean_si_sdri()));
        let _ = writeln!(s, "stoi = {}", fmt(self.mean_stoi()));
        let _ = writeln!(s, "pesq = {}", fmt(self.mean_pesq()));
        s
    }

    /// One JSON object per utterance.
    pub fn to_jsonl(&self) -> String {
        self.utterances
            .iter()
            .map(|u| serde_json::to_string(u).expect("score serializes") + "\n")
            .collect()
    }
}
