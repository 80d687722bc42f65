//! Stage runner: batch building, forward, loss, clipping and Adam steps.

use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tse_autograd::{clip_global_norm, global_norm, lit, Adam, BoundParams, Tape, Tensor, Var};

use super::checkpoint::{AdamState, Checkpoint, EpochRecord};
use super::{lr_at_epoch, Stage, TrainPlan};
use crate::augment::{make_onthefly_batch, BatchMode, DatasetSource, SourceItem, Strategy};
use crate::data::mix_seed;
use crate::dsp::{ComplexSpec, Waveform};
use crate::error::{Result, TseError};
use crate::guidance::{
    context_interaction_on_tape, context_interaction_with, noise_agnostic_guidance, stack_features,
    GuidanceSource, InteractionConfig, SpecDenoiser, StackLayout,
};
use crate::manifest::{DatasetManifest, Provenance};
use crate::metrics::{joint_loss_on_tape, si_sdr_slices, LossWeights, NegSiSdrOp};
use crate::nets::{Backbone, BackboneConfig, Denoiser, DenoiserConfig};
use crate::pipeline::{Frontend, FrontendConfig};
use crate::wav::read_wav;

/// Configuration of one stage run.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub plan: TrainPlan,
    pub frontend: FrontendConfig,
    pub denoiser: DenoiserConfig,
    /// `in_channels` is overridden by the strategy's layout.
    pub backbone: BackboneConfig,
}

/// Checkpoints a stage starts from.
#[derive(Clone, Debug, Default)]
pub struct Prior {
    pub denoiser: Option<Checkpoint>,
    pub backbone: Option<Checkpoint>,
    /// Continue an interrupted run of the same stage.
    pub resume: Option<Checkpoint>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Rewritten after every epoch.
    pub checkpoint_path: Option<PathBuf>,
    /// Stop after this many epochs of the plan have completed.
    pub stop_after: Option<usize>,
}

/// Compressed spectra and references of one manifest entry.
struct Example {
    y: ComplexSpec<f32>,
    e: ComplexSpec<f32>,
    target: Vec<f32>,
    clean: Vec<f32>,
}

/// Guidance used while the denoiser is frozen.
enum FrozenGuide<'a> {
    /// Plain interaction with the noisy mixture.
    Noisy,
    Denoise(&'a dyn SpecDenoiser<f32>),
}

fn load_examples(m: &DatasetManifest, frontend: &Frontend<f32>) -> Result<Vec<Example>> {
    m.entries
        .iter()
        .map(|entry| {
            let mix: Waveform<f32> = read_wav(&m.resolve(&entry.mixture))?;
            let enroll: Waveform<f32> = read_wav(&m.resolve(&entry.enrollment))?;
            let target: Waveform<f32> = read_wav(&m.resolve(&entry.target))?;
            let clean: Waveform<f32> = read_wav(&m.resolve(&entry.clean_mix))?;
            if target.len() != mix.len() || clean.len() != mix.len() {
                return Err(TseError::Data(format!(
                    "{}: mixture, target and clean mixture lengths differ ({}, {}, {})",
                    entry.id,
                    mix.len(),
                    target.len(),
                    clean.len()
                )));
            }
            Ok(Example {
                y: frontend.analyze(&mix)?,
                e: frontend.analyze(&enroll)?,
                target: target.into_samples(),
                clean: clean.into_samples(),
            })
        })
        .collect()
}

/// Stacked backbone inputs for one example under a frozen denoiser: one
/// item, or two when the batch is enlarged with denoised twins.
fn frozen_inputs(ex: &Example, guide: &FrozenGuide, strategy: &Strategy) -> Result<Vec<Tensor<f32>>> {
    match guide {
        FrozenGuide::Noisy => {
            let g = context_interaction_with(&ex.e, &ex.y, InteractionConfig::default(), GuidanceSource::NoisyInteraction)?;
            if strategy.batch == BatchMode::Enlarged {
                // Identity twins are copies of the original.
                let x = stack_features(&ex.y, &g, Some(&ex.y), strategy.layout)?.data;
                return Ok(vec![x.clone(), x]);
            }
            Ok(vec![stack_features(&ex.y, &g, Some(&ex.y), strategy.layout)?.data])
        }
        FrozenGuide::Denoise(d) => {
            if strategy.batch == BatchMode::Enlarged {
                let src = SourceItem {
                    mixture: ex.y.clone(),
                    enrollment: ex.e.clone(),
                    target: Arc::new(Waveform::new(ex.target.clone(), ex.y.config().sample_rate)?),
                };
                let batch = make_onthefly_batch(std::slice::from_ref(&src), *d)?;
                return batch
                    .items
                    .iter()
                    .map(|it| stack_features(&it.input, &it.guidance, None, strategy.layout).map(|s| s.data))
                    .collect();
            }
            let (g, yd) = noise_agnostic_guidance(&ex.e, &ex.y, *d)?;
            Ok(vec![stack_features(&ex.y, &g, Some(&yd), strategy.layout)?.data])
        }
    }
}

/// Mean over items of the backbone term plus the weighted denoiser term.
fn combine(
    t: &mut Tape<f32>,
    denoised_wave: Option<Var>,
    estimates: &[Var],
    ex: &Example,
    weights: LossWeights,
) -> Result<Var> {
    let (total, den, first) = joint_loss_on_tape(t, denoised_wave, &ex.clean, estimates.first().copied(), &ex.target, weights)?;
    if estimates.len() <= 1 {
        return Ok(total);
    }
    let mut sum = first.expect("backbone term is active when estimates are given");
    for &est in &estimates[1..] {
        let l = NegSiSdrOp::apply(t, est, &ex.target)?;
        sum = t.add(sum, l);
    }
    let mean = t.scale(sum, lit(weights.backbone / estimates.len() as f64));
    Ok(match den {
        Some(d) => {
            let d = t.scale(d, lit(weights.denoiser));
            t.add(d, mean)
        }
        None => mean,
    })
}

fn stack_on_tape(t: &mut Tape<f32>, parts: &[Var], f: usize, frames: usize) -> Var {
    let views: Vec<Var> = parts.iter().map(|&p| t.reshape(p, &[2, f, frames])).collect();
    t.concat(&views, 0)
}

struct Runner {
    strategy: Strategy,
    frontend: Frontend<f32>,
    weights: LossWeights,
}

impl Runner {
    /// Loss of one example with the denoiser live on the tape.
    fn live_loss(
        &self,
        t: &mut Tape<f32>,
        den: &Denoiser<f32>,
        pd: &BoundParams,
        bb: Option<(&Backbone<f32>, &BoundParams)>,
        ex: &Example,
    ) -> Result<Var> {
        let len = ex.target.len();
        let y = t.constant(ex.y.data().clone());
        let yd = den.forward(t, pd, y)?;
        let yd_wave = self.frontend.synthesize_on_tape(t, yd, len);
        let Some((bb, pb)) = bb else {
            return combine(t, Some(yd_wave), &[], ex, self.weights);
        };
        let (f, frames) = (ex.y.bins(), ex.y.frames());
        let e = t.constant(ex.e.data().clone());
        let g = context_interaction_on_tape(t, e, yd, InteractionConfig::default())?;
        let mut inputs = Vec::new();
        match self.strategy.layout {
            StackLayout::BaseConcat => inputs.push(stack_on_tape(t, &[y, g], f, frames)),
            StackLayout::DistortionConcat => inputs.push(stack_on_tape(t, &[y, yd, g], f, frames)),
        }
        if self.strategy.batch == BatchMode::Enlarged {
            inputs.push(stack_on_tape(t, &[yd, g], f, frames));
        }
        let mut estimates = Vec::new();
        for x in inputs {
            let est = bb.forward(t, pb, x)?;
            estimates.push(self.frontend.synthesize_on_tape(t, est, len));
        }
        combine(t, Some(yd_wave), &estimates, ex, self.weights)
    }

    fn frozen_loss(&self, t: &mut Tape<f32>, bb: &Backbone<f32>, pb: &BoundParams, inputs: &[Tensor<f32>], ex: &Example) -> Result<Var> {
        let len = ex.target.len();
        let mut estimates = Vec::new();
        for x in inputs {
            let xv = t.constant(x.clone());
            let est = bb.forward(t, pb, xv)?;
            estimates.push(self.frontend.synthesize_on_tape(t, est, len));
        }
        combine(t, None, &estimates, ex, self.weights)
    }
}

fn add_grads(acc: &mut Option<Vec<Tensor<f32>>>, g: Vec<Tensor<f32>>) {
    match acc {
        Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| a.add_assign(g)),
        None => *acc = Some(g),
    }
}

fn check_compatible(spec: &StageSpec, ck: &Checkpoint, what: &str) -> Result<()> {
    if ck.frontend != spec.frontend {
        return Err(TseError::Config(format!("{what} checkpoint was trained with a different front end")));
    }
    Ok(())
}

/// Mean dev SI-SDR of the current models.
fn dev_score(
    dev: &[Example],
    frozen: Option<&[Vec<Tensor<f32>>]>,
    runner: &Runner,
    den: Option<&Denoiser<f32>>,
    bb: Option<&Backbone<f32>>,
) -> Result<f64> {
    let fe = &runner.frontend;
    let mut total = 0.0;
    for (i, ex) in dev.iter().enumerate() {
        let (est, reference) = match bb {
            None => {
                let d = den.expect("denoiser stage has a denoiser");
                (fe.synthesize(&d.enhance(&ex.y)?)?, &ex.clean)
            }
            Some(bb) => {
                let x = match frozen {
                    Some(f) => f[i][0].clone(),
                    None => {
                        let (g, yd) = match den {
                            Some(d) => noise_agnostic_guidance(&ex.e, &ex.y, d)?,
                            None => (
                                context_interaction_with(&ex.e, &ex.y, InteractionConfig::default(), GuidanceSource::NoisyInteraction)?,
                                ex.y.clone(),
                            ),
                        };
                        stack_features(&ex.y, &g, Some(&yd), runner.strategy.layout)?.data
                    }
                };
                let layout = runner.strategy.layout;
                let mask = bb.infer_mask(&crate::guidance::StackedInput { data: x, layout })?;
                let est = tse_autograd::tape::complex_mul(&mask, ex.y.data());
                (fe.synthesize(&ex.y.with_data(est)?)?, &ex.target)
            }
        };
        total += si_sdr_slices(est.samples(), reference)?;
    }
    Ok(total / dev.len().max(1) as f64)
}

/// Runs one training stage and returns its final checkpoint.
pub fn run_stage(
    spec: &StageSpec,
    train: &DatasetManifest,
    dev: Option<&DatasetManifest>,
    prior: &Prior,
    opts: &RunOptions,
) -> Result<Checkpoint> {
    let plan = &spec.plan;
    plan.validate()?;
    let stft = spec.frontend.stft;
    let mut bb_cfg = spec.backbone.clone();
    bb_cfg.in_channels = plan.strategy.descriptor().layout.channels();
    if bb_cfg.freq_bins != stft.freq_bins() {
        return Err(TseError::Config(format!(
            "backbone expects {} bins, STFT gives {}",
            bb_cfg.freq_bins,
            stft.freq_bins()
        )));
    }
    let (denoiser, backbone) = match plan.stage {
        Stage::PretrainDenoiser => (Some(Denoiser::new(spec.denoiser.clone(), stft, mix_seed(&[plan.seed, 1]))?), None),
        Stage::PretrainBackbone => {
            let den = if plan.identity_denoiser {
                None
            } else {
                let ck = prior
                    .denoiser
                    .as_ref()
                    .ok_or_else(|| TseError::Config("pretrain_backbone needs a pretrained denoiser checkpoint".into()))?;
                check_compatible(spec, ck, "denoiser")?;
                Some(ck.denoiser.clone().ok_or_else(|| TseError::Config("denoiser checkpoint holds no denoiser".into()))?)
            };
            (den, Some(Backbone::new(bb_cfg, mix_seed(&[plan.seed, 2]))?))
        }
        Stage::JointFinetune => {
            let bck = prior
                .backbone
                .as_ref()
                .ok_or_else(|| TseError::Config("joint_finetune needs a pretrained backbone checkpoint".into()))?;
            check_compatible(spec, bck, "backbone")?;
            let dck = prior.denoiser.as_ref().unwrap_or(bck);
            check_compatible(spec, dck, "denoiser")?;
            let den = dck
                .denoiser
                .clone()
                .filter(|_| !dck.plan.identity_denoiser)
                .ok_or_else(|| TseError::Config("joint_finetune needs a pretrained denoiser checkpoint".into()))?;
            let bb = bck
                .backbone
                .clone()
                .ok_or_else(|| TseError::Config("backbone checkpoint holds no backbone".into()))?;
            if bb.config().in_channels != bb_cfg.in_channels {
                return Err(TseError::Config(format!(
                    "backbone was pretrained for {} input channels, strategy {} needs {}",
                    bb.config().in_channels,
                    plan.strategy.as_str(),
                    bb_cfg.in_channels
                )));
            }
            (Some(den), Some(bb))
        }
    };
    match (&denoiser, plan.stage) {
        (Some(d), Stage::PretrainBackbone) => {
            let guide = FrozenGuide::Denoise(d);
            run_with(spec, train, dev, denoiser.clone(), backbone, Some(&guide), prior, opts)
        }
        (None, Stage::PretrainBackbone) => run_with(spec, train, dev, None, backbone, Some(&FrozenGuide::Noisy), prior, opts),
        _ => run_with(spec, train, dev, denoiser, backbone, None, prior, opts),
    }
}

/// Backbone pretraining against an arbitrary frozen spectral denoiser. The
/// returned checkpoint records the identity flag from the plan and holds no
/// denoiser.
pub fn run_backbone_stage_with(
    spec: &StageSpec,
    denoiser: &dyn SpecDenoiser<f32>,
    train: &DatasetManifest,
    dev: Option<&DatasetManifest>,
    opts: &RunOptions,
) -> Result<Checkpoint> {
    spec.plan.validate()?;
    if spec.plan.stage != Stage::PretrainBackbone {
        return Err(TseError::Config("a fixed denoiser only applies to backbone pretraining".into()));
    }
    let mut bb_cfg = spec.backbone.clone();
    bb_cfg.in_channels = spec.plan.strategy.descriptor().layout.channels();
    let bb = Backbone::new(bb_cfg, mix_seed(&[spec.plan.seed, 2]))?;
    run_with(spec, train, dev, None, Some(bb), Some(&FrozenGuide::Denoise(denoiser)), &Prior::default(), opts)
}

#[allow(clippy::too_many_arguments)]
fn run_with(
    spec: &StageSpec,
    train: &DatasetManifest,
    dev: Option<&DatasetManifest>,
    mut denoiser: Option<Denoiser<f32>>,
    mut backbone: Option<Backbone<f32>>,
    frozen_guide: Option<&FrozenGuide>,
    prior: &Prior,
    opts: &RunOptions,
) -> Result<Checkpoint> {
    let plan = &spec.plan;
    let strategy = plan.strategy.descriptor();
    let has_denoised = train.entries.iter().any(|e| e.provenance == Provenance::Denoised);
    match strategy.dataset {
        DatasetSource::Merged if !has_denoised && plan.stage != Stage::PretrainDenoiser => {
            return Err(TseError::Config(
                "the offline strategy trains on the merged manifest; build it first".into(),
            ))
        }
        DatasetSource::Original if has_denoised => {
            return Err(TseError::Config(format!(
                "strategy {} does not use denoised dataset entries",
                plan.strategy.as_str()
            )))
        }
        _ => {}
    }
    if train.is_empty() {
        return Err(TseError::Config("training manifest is empty".into()));
    }
    let runner = Runner {
        strategy,
        frontend: Frontend::from_config(&spec.frontend),
        weights: plan.stage.loss_weights(),
    };
    let train_denoiser = plan.stage != Stage::PretrainBackbone;

    let mut den_opt = denoiser.as_ref().filter(|_| train_denoiser).map(|d| Adam::<f32>::new(&d.params));
    let mut bb_opt = backbone.as_ref().map(|b| Adam::<f32>::new(&b.params));
    let mut history = Vec::new();
    let mut start = 0;
    if let Some(ck) = &prior.resume {
        if ck.plan.stage != plan.stage || ck.plan.seed != plan.seed || ck.plan.strategy != plan.strategy {
            return Err(TseError::Config("resume checkpoint belongs to a different stage, seed or strategy".into()));
        }
        check_compatible(spec, ck, "resume")?;
        if ck.plan.identity_denoiser != plan.identity_denoiser {
            return Err(TseError::Config("resume checkpoint differs in the identity-denoiser flag".into()));
        }
        if train_denoiser || !plan.identity_denoiser {
            denoiser = ck.denoiser.clone().or(denoiser);
        }
        backbone = ck.backbone.clone().or(backbone);
        den_opt = ck.denoiser_opt.as_ref().map(AdamState::restore).or(den_opt);
        bb_opt = ck.backbone_opt.as_ref().map(AdamState::restore).or(bb_opt);
        history = ck.history.clone();
        start = ck.epoch;
    }

    let examples = load_examples(train, &runner.frontend)?;
    let dev_examples = match dev {
        Some(d) => load_examples(d, &runner.frontend)?,
        None => Vec::new(),
    };
    let (frozen, dev_frozen) = match frozen_guide {
        Some(guide) => {
            let f = examples.iter().map(|e| frozen_inputs(e, guide, &strategy)).collect::<Result<Vec<_>>>()?;
            let plain = Strategy {
                batch: BatchMode::Plain,
                ..strategy
            };
            let d = dev_examples.iter().map(|e| frozen_inputs(e, guide, &plain)).collect::<Result<Vec<_>>>()?;
            (Some(f), Some(d))
        }
        None => (None, None),
    };

    let end = opts.stop_after.unwrap_or(plan.epochs).min(plan.epochs);
    let mut lr = prior.resume.as_ref().map_or(plan.lr0, |c| c.lr);
    for epoch in start..end {
        lr = lr_at_epoch(plan, epoch)?;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[plan.seed, 0x5eed, epoch as u64])));
        let mut loss_sum = 0.0;
        let mut norms = Vec::new();
        for (bi, batch) in order.chunks(plan.batch_size).enumerate() {
            let mut acc_d: Option<Vec<Tensor<f32>>> = None;
            let mut acc_b: Option<Vec<Tensor<f32>>> = None;
            for &i in batch {
                let ex = &examples[i];
                let mut t = Tape::new();
                let pd = denoiser.as_ref().filter(|_| frozen.is_none()).map(|d| d.params.bind(&mut t, train_denoiser));
                let pb = backbone.as_ref().map(|b| b.params.bind(&mut t, true));
                let loss = match (&frozen, &pd) {
                    (Some(f), _) => runner.frozen_loss(&mut t, backbone.as_ref().unwrap(), pb.as_ref().unwrap(), &f[i], ex)?,
                    (None, Some(pd)) => runner.live_loss(
                        &mut t,
                        denoiser.as_ref().unwrap(),
                        pd,
                        backbone.as_ref().zip(pb.as_ref()),
                        ex,
                    )?,
                    (None, None) => unreachable!("live stages always hold a denoiser"),
                };
                let lv = t.value(loss).data()[0] as f64;
                if !lv.is_finite() {
                    return Err(TseError::TrainingDiverged {
                        epoch,
                        batch: bi,
                        reason: format!("non-finite loss {lv}"),
                    });
                }
                loss_sum += lv;
                let mut g = t.backward(loss);
                if train_denoiser {
                    if let (Some(d), Some(pd)) = (&denoiser, &pd) {
                        add_grads(&mut acc_d, pd.gradients(&d.params, &mut g));
                    }
                }
                if let (Some(b), Some(pb)) = (&backbone, &pb) {
                    add_grads(&mut acc_b, pb.gradients(&b.params, &mut g));
                }
            }
            let n_d = acc_d.as_ref().map_or(0, Vec::len);
            let mut all: Vec<Tensor<f32>> = acc_d.into_iter().flatten().chain(acc_b.into_iter().flatten()).collect();
            let inv = 1.0 / batch.len() as f32;
            all.iter_mut().for_each(|g| g.scale_in_place(inv));
            let pre = clip_global_norm(&mut all, plan.grad_clip_l2 as f32) as f64;
            if !pre.is_finite() {
                return Err(TseError::TrainingDiverged {
                    epoch,
                    batch: bi,
                    reason: "non-finite gradient".into(),
                });
            }
            norms.push((pre, global_norm(&all) as f64));
            let (gd, gb) = all.split_at(n_d);
            if let (Some(opt), Some(d)) = (den_opt.as_mut(), denoiser.as_mut()) {
                if train_denoiser {
                    opt.step(&mut d.params, gd, lr as f32);
                }
            }
            if let (Some(opt), Some(b)) = (bb_opt.as_mut(), backbone.as_mut()) {
                opt.step(&mut b.params, gb, lr as f32);
            }
        }
        let dev_si_sdr = if dev_examples.is_empty() {
            None
        } else {
            let live_den = if plan.identity_denoiser { None } else { denoiser.as_ref() };
            Some(dev_score(&dev_examples, dev_frozen.as_deref(), &runner, live_den, backbone.as_ref())?)
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / examples.len() as f64,
            dev_si_sdr,
            grad_norms: norms,
        };
        log::info!(
            "{} seed {} epoch {epoch}: lr {lr:.3e} loss {:.3} dev SI-SDR {}",
            plan.stage.as_str(),
            plan.seed,
            record.train_loss,
            dev_si_sdr.map_or("n/a".into(), |v| format!("{v:.3} dB"))
        );
        history.push(record);
        if let Some(path) = &opts.checkpoint_path {
            snapshot(spec, &denoiser, &backbone, &den_opt, &bb_opt, epoch + 1, lr, &history).save(path)?;
        }
    }
    let done = end.max(start);
    Ok(snapshot(spec, &denoiser, &backbone, &den_opt, &bb_opt, done, lr, &history))
}

#[allow(clippy::too_many_arguments)]
fn snapshot(
    spec: &StageSpec,
    denoiser: &Option<Denoiser<f32>>,
    backbone: &Option<Backbone<f32>>,
    den_opt: &Option<Adam<f32>>,
    bb_opt: &Option<Adam<f32>>,
    epoch: usize,
    lr: f64,
    history: &[EpochRecord],
) -> Checkpoint {
    Checkpoint {
        plan: spec.plan.clone(),
        frontend: spec.frontend,
        denoiser: denoiser.clone(),
        backbone: backbone.clone(),
        denoiser_opt: den_opt.as_ref().map(AdamState::capture),
        backbone_opt: bb_opt.as_ref().map(AdamState::capture),
        epoch,
        lr,
        history: history.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;

    #[test]
    fn combine_averages_twins() {
        let cfg = StftConfig::default();
        let ex = Example {
            y: ComplexSpec::zeros(cfg, 3, 128),
            e: ComplexSpec::zeros(cfg, 3, 128),
            target: (0..64).map(|i| (i as f32 * 0.3).sin()).collect(),
            clean: (0..64).map(|i| (i as f32 * 0.2).cos()).collect(),
        };
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_vec(&[64], (0..64).map(|i| (i as f32 * 0.31).sin()).collect()), true);
        let b = t.leaf(Tensor::from_vec(&[64], (0..64).map(|i| (i as f32 * 0.7).sin()).collect()), true);
        let total = combine(&mut t, None, &[a, b], &ex, LossWeights::backbone_only()).unwrap();
        let la = crate::metrics::neg_si_sdr_loss(t.value(a).data(), &ex.target);
        let lb = crate::metrics::neg_si_sdr_loss(t.value(b).data(), &ex.target);
        assert!((t.value(total).data()[0] - (la + lb) / 2.0).abs() < 1e-5);
    }
}
