//! Spectrogram panels and raw arrays comparing noisy and denoised guidance.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use npyz::WriterBuilder;
use serde::{Deserialize, Serialize};
use tse_autograd::Tensor;

use super::{Checkpoint, Extractor};
use crate::dsp::{ComplexSpec, Waveform};
use crate::error::{Result, TseError};
use crate::guidance::{context_interaction_with, GuidanceSource, InteractionConfig, OracleDenoiser, SpecDenoiser};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::wav::read_wav;

/// Panel names in output order.
pub const PANELS: [&str; 5] = [
    "enrollment",
    "noisy_mixture",
    "denoised_mixture",
    "guidance_noisy",
    "guidance_denoised",
];

/// Which denoiser produces `Y_d` for the figure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureDenoiser {
    /// The checkpoint's trained denoiser.
    Model,
    Identity,
    /// The clean two-speaker mixture stands in for `Y_d`.
    Oracle,
}

#[derive(Clone, Debug)]
pub struct FigureSet {
    /// PNG files, one per entry of [`PANELS`].
    pub panels: Vec<PathBuf>,
    /// `.npy` files holding the `(2F, T)` compressed spectra behind each panel.
    pub arrays: Vec<PathBuf>,
}

const DB_RANGE: f64 = 60.0;

/// Five-stop dark-to-bright palette.
fn colormap(v: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 4.0],
        [87.0, 16.0, 110.0],
        [188.0, 55.0, 84.0],
        [249.0, 142.0, 9.0],
        [252.0, 255.0, 164.0],
    ];
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Log-magnitude image of a `(2F, T)` tensor, low frequencies at the bottom.
fn spectrogram_image(data: &Tensor<f32>) -> RgbImage {
    let (f2, frames) = (data.dim(0), data.dim(1));
    let f = f2 / 2;
    let d = data.data();
    let db: Vec<f64> = (0..f * frames)
        .map(|i| {
            let (re, im) = (d[i] as f64, d[f * frames + i] as f64);
            20.0 * (re.hypot(im) + 1e-8).log10()
        })
        .collect();
    let top = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    RgbImage::from_fn(frames as u32, f as u32, |x, y| {
        let row = f - 1 - y as usize;
        colormap((db[row * frames + x as usize] - (top - DB_RANGE)) / DB_RANGE)
    })
}

fn write_npy(path: &Path, data: &Tensor<f32>) -> Result<()> {
    let io = |e: std::io::Error| TseError::ingest(path, e);
    let file = File::create(path).map_err(io)?;
    let shape: Vec<u64> = data.shape().iter().map(|&d| d as u64).collect();
    let mut w = npyz::WriteOptions::new()
        .default_dtype()
        .shape(&shape)
        .writer(BufWriter::new(file))
        .begin_nd()
        .map_err(io)?;
    w.extend(data.data().iter().copied()).map_err(io)?;
    w.finish().map_err(io)
}

/// Writes the five panels and their arrays for one example into `out_dir`.
pub fn export_guidance_figures(
    ck: &Checkpoint,
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    which: FigureDenoiser,
    out_dir: &Path,
) -> Result<FigureSet> {
    let ex = Extractor::from_checkpoint(ck).or_else(|e| match which {
        FigureDenoiser::Model => Err(e),
        _ => Ok(Extractor {
            frontend: crate::pipeline::Frontend::from_config(&ck.frontend),
            denoiser: None,
            backbone: None,
            layout: ck.plan.strategy.descriptor().layout,
        }),
    })?;
    let fe = &ex.frontend;
    let mix: Waveform<f32> = read_wav(&manifest.resolve(&entry.mixture))?;
    let enroll: Waveform<f32> = read_wav(&manifest.resolve(&entry.enrollment))?;
    let e = fe.analyze(&enroll)?;
    let y = fe.analyze(&mix)?;
    let yd: ComplexSpec<f32> = match which {
        FigureDenoiser::Model => {
            if ex.denoiser.is_none() {
                return Err(TseError::Config("checkpoint has no trained denoiser to visualize".into()));
            }
            ex.denoise_spec(&y)?
        }
        FigureDenoiser::Identity => y.clone(),
        FigureDenoiser::Oracle => {
            let clean: Waveform<f32> = read_wav(&manifest.resolve(&entry.clean_mix))?;
            OracleDenoiser { clean: fe.analyze(&clean)? }.denoise(&y)?
        }
    };
    let cfg = InteractionConfig::default();
    let g_noisy = context_interaction_with(&e, &y, cfg, GuidanceSource::NoisyInteraction)?;
    let source = match which {
        FigureDenoiser::Oracle => GuidanceSource::OracleCleanInteraction,
        _ => GuidanceSource::DenoisedInteraction,
    };
    let g_denoised = context_interaction_with(&e, &yd, cfg, source)?;

    std::fs::create_dir_all(out_dir).map_err(|err| TseError::ingest(out_dir, err))?;
    let tensors = [e.data(), y.data(), yd.data(), &g_noisy.data, &g_denoised.data];
    let mut set = FigureSet {
        panels: Vec::new(),
        arrays: Vec::new(),
    };
    for (name, t) in PANELS.iter().zip(tensors) {
        let png = out_dir.join(format!("{name}.png"));
        spectrogram_image(t)
            .save(&png)
            .map_err(|err| TseError::ingest(&png, err))?;
        let npy = out_dir.join(format!("{name}.npy"));
        write_npy(&npy, t)?;
        set.panels.push(png);
        set.arrays.push(npy);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_endpoints() {
        assert_eq!(colormap(0.0), Rgb([0, 0, 4]));
        assert_eq!(colormap(1.0), Rgb([252, 255, 164]));
        assert_eq!(colormap(-3.0), colormap(0.0));
    }

    #[test]
    fn image_orientation() {
        // Energy only in the top bin of the first frame.
        let mut t = Tensor::zeros(&[8, 2]);
        t.data_mut()[3 * 2] = 1.0;
        let img = spectrogram_image(&t);
        assert_eq!(img.dimensions(), (2, 4));
        assert_eq!(*img.get_pixel(0, 0), colormap(1.0));
        assert_eq!(*img.get_pixel(1, 3), colormap(0.0));
    }
}
