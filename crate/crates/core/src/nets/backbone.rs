//! SEF-PNet-lite mask estimator: conv encoder, TCN bottleneck, pooling
//! pyramid and a transposed-conv decoder with skips.

use serde::{Deserialize, Serialize};
use tse_autograd::{BoundParams, ConvGeom, ParamStore, Tape, Var};

use super::layers::{strided_height, Conv, Deconv, Init, Prelu};
use crate::error::{Result, TseError};
use crate::guidance::StackedInput;
use crate::dsp::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub freq_bins: usize,
    pub encoder_channels: usize,
    /// Temporal kernel of the first encoder conv.
    pub encoder_kernel_t: usize,
    pub bottleneck: usize,
    pub tcn_hidden: usize,
    pub tcn_dilations: Vec<usize>,
    pub pyramid_scales: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            freq_bins: 129,
            encoder_channels: 16,
            encoder_kernel_t: 3,
            bottleneck: 64,
            tcn_hidden: 64,
            tcn_dilations: vec![1, 2, 4, 8],
            pyramid_scales: vec![2, 4],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 4 && self.in_channels != 6 {
            return Err(TseError::Config(format!("in_channels must be 4 or 6, got {}", self.in_channels)));
        }
        if self.freq_bins < 3 {
            return Err(TseError::Config("backbone needs at least 3 frequency bins".into()));
        }
        if [self.encoder_channels, self.bottleneck, self.tcn_hidden].contains(&0) {
            return Err(TseError::Config("backbone widths must be positive".into()));
        }
        if self.encoder_kernel_t % 2 == 0 {
            return Err(TseError::Config("encoder_kernel_t must be odd".into()));
        }
        if self.tcn_dilations.contains(&0) || self.pyramid_scales.iter().any(|&k| k < 2) {
            return Err(TseError::Config("dilations must be positive and pyramid scales at least 2".into()));
        }
        let mut scales = self.pyramid_scales.clone();
        scales.sort_unstable();
        scales.dedup();
        if scales.len() != self.pyramid_scales.len() {
            return Err(TseError::Config("pyramid scales must be distinct".into()));
        }
        Ok(())
    }

    fn heights(&self) -> (usize, usize, usize) {
        let f1 = strided_height(self.freq_bins, 3, 2);
        (self.freq_bins, f1, strided_height(f1, 3, 2))
    }

    fn enc1_geom(&self) -> ConvGeom {
        ConvGeom {
            kernel_t: self.encoder_kernel_t,
            pad_t: self.encoder_kernel_t / 2,
            ..ConvGeom::freq(3, 2, 1)
        }
    }
}

#[derive(Clone, Debug)]
struct TcnBlock {
    expand: Conv,
    act1: Prelu,
    temporal: Conv,
    act2: Prelu,
    project: Conv,
}

#[derive(Clone, Debug)]
struct Layers {
    enc1: Conv,
    enc1_act: Prelu,
    enc2: Conv,
    enc2_act: Prelu,
    squeeze: Conv,
    tcn: Vec<TcnBlock>,
    pyramid: Vec<Conv>,
    expand: Conv,
    expand_act: Prelu,
    dec2: Deconv,
    dec2_act: Prelu,
    dec1: Deconv,
}

/// Complex-mask estimator over a stacked `(C, F, T)` input.
#[derive(Clone, Debug)]
pub struct Backbone<S: Real> {
    cfg: BackboneConfig,
    layers: Layers,
    pub params: ParamStore<S>,
}

impl<S: Real> Backbone<S> {
    pub fn new(cfg: BackboneConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(&mut params, seed);
        let (c, h, p) = (cfg.encoder_channels, cfg.bottleneck, cfg.tcn_hidden);
        let (_, _, f2) = cfg.heights();
        let down = ConvGeom::freq(3, 2, 1);
        let pw = ConvGeom::pointwise();
        let layers = Layers {
            enc1: Conv::new(&mut init, "encoder.conv1", cfg.in_channels, c, cfg.enc1_geom()),
            enc1_act: Prelu::new(&mut init, "encoder.act1", c),
            enc2: Conv::new(&mut init, "encoder.conv2", c, c, down),
            enc2_act: Prelu::new(&mut init, "encoder.act2", c),
            squeeze: Conv::new(&mut init, "bottleneck.squeeze", c * f2, h, pw),
            tcn: cfg
                .tcn_dilations
                .iter()
                .enumerate()
                .map(|(i, &d)| TcnBlock {
                    expand: Conv::new(&mut init, &format!("tcn.block{i}.expand"), h, p, pw),
                    act1: Prelu::new(&mut init, &format!("tcn.block{i}.act1"), p),
                    temporal: Conv::new(
                        &mut init,
                        &format!("tcn.block{i}.temporal"),
                        p,
                        p,
                        ConvGeom::time(3, d).with_groups(p),
                    ),
                    act2: Prelu::new(&mut init, &format!("tcn.block{i}.act2"), p),
                    project: Conv::new(&mut init, &format!("tcn.block{i}.project"), p, h, pw),
                })
                .collect(),
            pyramid: cfg
                .pyramid_scales
                .iter()
                .map(|k| Conv::new(&mut init, &format!("pyramid.scale{k}"), h, h, pw))
                .collect(),
            expand: Conv::new(&mut init, "bottleneck.expand", h, c * f2, pw),
            expand_act: Prelu::new(&mut init, "bottleneck.act", c),
            dec2: Deconv::new(&mut init, "decoder.deconv2", 2 * c, c, down),
            dec2_act: Prelu::new(&mut init, "decoder.act2", c),
            dec1: Deconv::new(&mut init, "decoder.deconv1", 2 * c, 2, down),
        };
        Ok(Self { cfg, layers, params })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    /// Closed-form parameter count for a configuration.
    pub fn expected_param_count(cfg: &BackboneConfig) -> usize {
        let (c, h, p) = (cfg.encoder_channels, cfg.bottleneck, cfg.tcn_hidden);
        let (_, _, f2) = cfg.heights();
        let down = ConvGeom::freq(3, 2, 1);
        let pw = ConvGeom::pointwise();
        let tcn = Conv::param_count(h, p, &pw)
            + p
            + Conv::param_count(p, p, &ConvGeom::time(3, 1).with_groups(p))
            + p
            + Conv::param_count(p, h, &pw);
        Conv::param_count(cfg.in_channels, c, &cfg.enc1_geom())
            + c
            + Conv::param_count(c, c, &down)
            + c
            + Conv::param_count(c * f2, h, &pw)
            + cfg.tcn_dilations.len() * tcn
            + cfg.pyramid_scales.len() * Conv::param_count(h, h, &pw)
            + Conv::param_count(h, c * f2, &pw)
            + c
            + Deconv::param_count(2 * c, c, &down)
            + c
            + Deconv::param_count(2 * c, 2, &down)
    }

    /// Tanh-bounded complex mask `(2F, T)` for a stacked input `x: (C, F, T)`.
    pub fn mask(&self, t: &mut Tape<S>, p: &BoundParams, x: Var) -> Result<Var> {
        let shape = t.shape(x).to_vec();
        let (f0, f1, f2) = self.cfg.heights();
        if shape.len() != 3 || shape[0] != self.cfg.in_channels || shape[1] != f0 {
            return Err(TseError::Shape(format!(
                "backbone expects ({}, {f0}, T), got {shape:?}",
                self.cfg.in_channels
            )));
        }
        let frames = shape[2];
        let l = &self.layers;
        let c = self.cfg.encoder_channels;
        let e1 = l.enc1.forward(t, p, x);
        let e1 = l.enc1_act.forward(t, p, e1);
        let e2 = l.enc2.forward(t, p, e1);
        let e2 = l.enc2_act.forward(t, p, e2);
        let flat = t.reshape(e2, &[c * f2, 1, frames]);
        let mut z = l.squeeze.forward(t, p, flat);
        for b in &l.tcn {
            let h = b.expand.forward(t, p, z);
            let h = b.act1.forward(t, p, h);
            let h = b.temporal.forward(t, p, h);
            let h = b.act2.forward(t, p, h);
            let h = b.project.forward(t, p, h);
            z = t.add(z, h);
        }
        let mut pyr = z;
        for (conv, &k) in l.pyramid.iter().zip(&self.cfg.pyramid_scales) {
            let pooled = t.avg_pool_last(z, k);
            let h = conv.forward(t, p, pooled);
            let up = t.upsample_last(h, k, frames);
            pyr = t.add(pyr, up);
        }
        let d = l.expand.forward(t, p, pyr);
        let d = t.reshape(d, &[c, f2, frames]);
        let d = l.expand_act.forward(t, p, d);
        let d = t.concat(&[d, e2], 0);
        let d = l.dec2.forward(t, p, d, f1);
        let d = l.dec2_act.forward(t, p, d);
        let d = t.concat(&[d, e1], 0);
        let d = l.dec1.forward(t, p, d, f0);
        let m = t.tanh(d);
        Ok(t.reshape(m, &[2 * f0, frames]))
    }

    /// Mask applied to channels 0-1 of the input: the compressed estimate `(2F, T)`.
    pub fn forward(&self, t: &mut Tape<S>, p: &BoundParams, x: Var) -> Result<Var> {
        let m = self.mask(t, p, x)?;
        let (f0, frames) = (self.cfg.freq_bins, t.shape(x)[2]);
        let y = t.narrow(x, 0, 0, 2);
        let y = t.reshape(y, &[2 * f0, frames]);
        Ok(t.complex_mul(m, y))
    }

    /// Inference-only mask for a stacked input.
    pub fn infer_mask(&self, x: &StackedInput<S>) -> Result<tse_autograd::Tensor<S>> {
        if x.layout.channels() != self.cfg.in_channels {
            return Err(TseError::Shape(format!(
                "{:?} layout has {} channels, backbone expects {}",
                x.layout,
                x.layout.channels(),
                self.cfg.in_channels
            )));
        }
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let xv = t.constant(x.data.clone());
        let m = self.mask(&mut t, &p, xv)?;
        Ok(t.value(m).clone())
    }
}
