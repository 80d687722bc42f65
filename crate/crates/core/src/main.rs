use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lgtse::augment::{build_offline_dataset, DatasetSource, OFFLINE_MANIFEST};
use lgtse::config::{RunConfig, Stamp};
use lgtse::data::{build_corpus, Corpus, SourceBank, Split};
use lgtse::manifest::DatasetManifest;
use lgtse::pipeline::Frontend;
use lgtse::train::{
    evaluate, export_guidance_figures, run_stage, Checkpoint, Extractor, FigureDenoiser, Prior, RunOptions, Stage,
};
use lgtse::wav::{read_wav, write_wav};
use lgtse::{Result, TseError};

#[derive(Parser)]
#[command(name = "lgtse", version, about = "Target speech extraction with noise-agnostic enrollment guidance")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set denoiser.dprnn_layers=1`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FigureArg {
    Model,
    Identity,
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/dev/test corpus.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Directory of per-speaker folders of 16-bit mono WAVs; synthetic voices when absent.
        #[arg(long)]
        sources: Option<PathBuf>,
    },
    /// Stage 1: train the denoiser on noisy mixtures.
    PretrainDenoiser {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the backbone from scratch against a frozen denoiser.
    PretrainBackbone {
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 checkpoint; not needed with `identity_denoiser = true`.
        #[arg(long)]
        denoiser: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Denoise the training split to disk and write the merged, shuffled manifest.
    BuildOffline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        denoiser: PathBuf,
    },
    /// Stage 2: unfreeze the denoiser and fine-tune both networks jointly.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        denoiser: Option<PathBuf>,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Extract the target speaker from one mixture.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long)]
        enrollment: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a corpus split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Per-utterance JSON lines.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Export spectrogram panels and arrays of noisy versus denoised guidance.
    VisualizeGuidance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Example id; the first entry of the split when absent.
        #[arg(long)]
        id: Option<String>,
        #[arg(long, value_enum, default_value = "model")]
        denoiser: FigureArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn stamp_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".stamp.json");
    out.with_file_name(name)
}

fn load_opt(path: &Option<PathBuf>) -> Result<Option<Checkpoint>> {
    path.as_deref().map(Checkpoint::load).transpose()
}

fn train_manifest(data: &Path, cfg: &RunConfig, stage: Stage) -> Result<DatasetManifest> {
    let train_dir = data.join(Split::Train.name());
    if stage != Stage::PretrainDenoiser && cfg.strategy.descriptor().dataset == DatasetSource::Merged {
        let path = train_dir.join(OFFLINE_MANIFEST);
        if !path.exists() {
            return Err(TseError::Config(format!(
                "{} not found; run build-offline first",
                path.display()
            )));
        }
        return DatasetManifest::read(&path);
    }
    DatasetManifest::read(&Corpus::manifest_path(data, Split::Train))
}

fn train(cfg: &RunConfig, stage: Stage, data: &Path, prior: Prior, out: &Path) -> Result<()> {
    let train = train_manifest(data, cfg, stage)?;
    let dev = DatasetManifest::read(&Corpus::manifest_path(data, Split::Dev))?;
    let opts = RunOptions {
        checkpoint_path: Some(out.to_path_buf()),
        stop_after: None,
    };
    let ck = run_stage(&cfg.stage_spec(stage), &train, Some(&dev), &prior, &opts)?;
    ck.save(out)?;
    if let Some(last) = ck.history.last() {
        println!(
            "{}: {} epochs, final loss {:.3}, dev SI-SDR {}",
            stage.as_str(),
            ck.epoch,
            last.train_loss,
            last.dev_si_sdr.map_or("n/a".into(), |v| format!("{v:.2} dB"))
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.common.config.as_deref(), &cli.common.overrides)?;
    match cli.command {
        Command::Simulate { out, sources } => {
            let corpus_cfg = lgtse::data::CorpusConfig {
                seed: cfg.seed,
                ..cfg.corpus.clone()
            };
            let bank = match &sources {
                Some(dir) => SourceBank::from_directory(dir, &corpus_cfg)?,
                None => SourceBank::synthetic(&corpus_cfg)?,
            };
            let corpus = build_corpus(&bank, &corpus_cfg, &out)?;
            println!(
                "wrote {} train, {} dev, {} test examples to {}",
                corpus.train.len(),
                corpus.dev.len(),
                corpus.test.len(),
                out.display()
            );
            Stamp::new("simulate", &cfg).write(&out.join("stamp.json"))
        }
        Command::PretrainDenoiser { data, out, resume } => {
            let prior = Prior {
                resume: load_opt(&resume)?,
                ..Prior::default()
            };
            train(&cfg, Stage::PretrainDenoiser, &data, prior, &out)?;
            Stamp::new("pretrain-denoiser", &cfg).write(&stamp_path(&out))
        }
        Command::PretrainBackbone {
            data,
            denoiser,
            out,
            resume,
        } => {
            let prior = Prior {
                denoiser: load_opt(&denoiser)?,
                backbone: None,
                resume: load_opt(&resume)?,
            };
            train(&cfg, Stage::PretrainBackbone, &data, prior, &out)?;
            Stamp::new("pretrain-backbone", &cfg).write(&stamp_path(&out))
        }
        Command::BuildOffline { data, denoiser } => {
            let ck = Checkpoint::load(&denoiser)?;
            let model = ck
                .denoiser
                .as_ref()
                .ok_or_else(|| TseError::Config("checkpoint holds no denoiser".into()))?;
            let train = DatasetManifest::read(&Corpus::manifest_path(&data, Split::Train))?;
            let merged = build_offline_dataset(&train, model, &Frontend::from_config(&ck.frontend), cfg.seed)?;
            let path = data.join(Split::Train.name()).join(OFFLINE_MANIFEST);
            println!("merged manifest with {} entries at {}", merged.len(), path.display());
            Stamp::new("build-offline", &cfg).write(&stamp_path(&path))
        }
        Command::Finetune {
            data,
            denoiser,
            backbone,
            out,
            resume,
        } => {
            let prior = Prior {
                denoiser: load_opt(&denoiser)?,
                backbone: Some(Checkpoint::load(&backbone)?),
                resume: load_opt(&resume)?,
            };
            train(&cfg, Stage::JointFinetune, &data, prior, &out)?;
            Stamp::new("finetune", &cfg).write(&stamp_path(&out))
        }
        Command::Extract {
            checkpoint,
            mixture,
            enrollment,
            out,
        } => {
            let ex = Extractor::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let est = ex.extract(&read_wav(&mixture)?, &read_wav(&enrollment)?)?;
            write_wav(&out, &est)?;
            Stamp::new("extract", &cfg).write(&stamp_path(&out))
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            report,
        } => {
            let manifest = DatasetManifest::read(&Corpus::manifest_path(&data, split.into()))?;
            let r = evaluate(&Checkpoint::load(&checkpoint)?, &manifest)?;
            print!("{}", r.summary());
            for (id, why) in &r.skipped {
                eprintln!("skipped {id}: {why}");
            }
            if let Some(path) = report {
                std::fs::write(&path, r.to_jsonl()).map_err(|e| TseError::Ingest {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                Stamp::new("evaluate", &cfg).write(&stamp_path(&path))?;
            }
            Ok(())
        }
        Command::VisualizeGuidance {
            checkpoint,
            data,
            split,
            id,
            denoiser,
            out,
        } => {
            let manifest = DatasetManifest::read(&Corpus::manifest_path(&data, split.into()))?;
            let entry = match &id {
                Some(id) => manifest.entries.iter().find(|e| &e.id == id),
                None => manifest.entries.first(),
            }
            .ok_or_else(|| TseError::InvalidInput(format!("no example {id:?} in the split")))?;
            let which = match denoiser {
                FigureArg::Model => FigureDenoiser::Model,
                FigureArg::Identity => FigureDenoiser::Identity,
                FigureArg::Oracle => FigureDenoiser::Oracle,
            };
            let set = export_guidance_figures(&Checkpoint::load(&checkpoint)?, &manifest, entry, which, &out)?;
            for p in set.panels.iter().chain(&set.arrays) {
                println!("{}", p.display());
            }
            Stamp::new("visualize-guidance", &cfg).write(&out.join("stamp.json"))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
