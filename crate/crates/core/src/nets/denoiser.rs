//! GTCRN-lite: ERB-banded conv encoder, gated temporal-conv blocks, grouped
//! dual-path recurrence and a mirrored decoder producing a complex mask.

use serde::{Deserialize, Serialize};
use tse_autograd::{BoundParams, ConvGeom, ParamStore, Tape, Tensor, Var};

use super::layers::{strided_height, Conv, Deconv, Gru, Init, Linear, Prelu};
use crate::dsp::{ComplexSpec, ErbFilterbank, Real, StftConfig};
use crate::error::{Result, TseError};
use crate::guidance::SpecDenoiser;

const KERNEL_F: usize = 5;
const GT_DILATIONS: [usize; 3] = [1, 2, 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub erb_bands: usize,
    pub encoder_channels: Vec<usize>,
    pub gt_blocks: usize,
    /// GRU width of each group.
    pub dprnn_hidden: usize,
    pub dprnn_groups: usize,
    pub dprnn_layers: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            erb_bands: 64,
            encoder_channels: vec![16, 16],
            gt_blocks: 3,
            dprnn_hidden: 32,
            dprnn_groups: 2,
            dprnn_layers: 2,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.encoder_channels.last().copied().unwrap_or(0);
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(TseError::Config("denoiser encoder channels must be positive".into()));
        }
        if self.gt_blocks == 0 || self.dprnn_layers == 0 {
            return Err(TseError::Config("denoiser needs at least one GT block and one DPRNN layer".into()));
        }
        if self.dprnn_groups == 0 || c % self.dprnn_groups != 0 {
            return Err(TseError::Config(format!(
                "{c} channels do not split into {} groups",
                self.dprnn_groups
            )));
        }
        if self.dprnn_hidden < 2 || self.dprnn_hidden % 2 != 0 {
            return Err(TseError::Config("dprnn_hidden must be even".into()));
        }
        Ok(())
    }

    fn gt_dilation(i: usize) -> usize {
        GT_DILATIONS[i % GT_DILATIONS.len()]
    }
}

/// Pointwise expand, gated grouped temporal conv, pointwise project, residual.
#[derive(Clone, Debug)]
struct GtBlock {
    expand: Conv,
    act: Prelu,
    temporal: Conv,
    project: Conv,
    channels: usize,
}

impl GtBlock {
    fn new<S: Real>(init: &mut Init<S>, name: &str, c: usize, dilation: usize) -> Self {
        Self {
            expand: Conv::new(init, &format!("{name}.expand"), c, 2 * c, ConvGeom::pointwise()),
            act: Prelu::new(init, &format!("{name}.act"), 2 * c),
            temporal: Conv::new(
                init,
                &format!("{name}.temporal"),
                2 * c,
                4 * c,
                ConvGeom::time(3, dilation).with_groups(2 * c),
            ),
            project: Conv::new(init, &format!("{name}.project"), 2 * c, c, ConvGeom::pointwise()),
            channels: c,
        }
    }

    fn param_count(c: usize) -> usize {
        Conv::param_count(c, 2 * c, &ConvGeom::pointwise())
            + 2 * c
            + Conv::param_count(2 * c, 4 * c, &ConvGeom::time(3, 1).with_groups(2 * c))
            + Conv::param_count(2 * c, c, &ConvGeom::pointwise())
    }

    fn forward<S: Real>(&self, t: &mut Tape<S>, p: &BoundParams, x: Var) -> Var {
        let c = self.channels;
        let h = self.expand.forward(t, p, x);
        let h = self.act.forward(t, p, h);
        let g = self.temporal.forward(t, p, h);
        let a = t.narrow(g, 0, 0, 2 * c);
        let b = t.narrow(g, 0, 2 * c, 2 * c);
        let a = t.tanh(a);
        let b = t.sigmoid(b);
        let h = t.mul(a, b);
        let h = self.project.forward(t, p, h);
        t.add(x, h)
    }
}

#[derive(Clone, Debug)]
struct DprnnGroup {
    intra_fwd: Gru,
    intra_bwd: Gru,
    intra_out: Linear,
    inter: Gru,
    inter_out: Linear,
}

/// Grouped dual-path recurrence: bidirectional over bands, then causal over frames.
#[derive(Clone, Debug)]
struct DprnnLayer {
    groups: Vec<DprnnGroup>,
    group_channels: usize,
}

impl DprnnLayer {
    fn new<S: Real>(init: &mut Init<S>, name: &str, c: usize, groups: usize, hidden: usize) -> Self {
        let cg = c / groups;
        Self {
            groups: (0..groups)
                .map(|g| DprnnGroup {
                    intra_fwd: Gru::new(init, &format!("{name}.g{g}.intra_fwd"), cg, hidden / 2),
                    intra_bwd: Gru::new(init, &format!("{name}.g{g}.intra_bwd"), cg, hidden / 2),
                    intra_out: Linear::new(init, &format!("{name}.g{g}.intra_out"), hidden, cg),
                    inter: Gru::new(init, &format!("{name}.g{g}.inter"), cg, hidden),
                    inter_out: Linear::new(init, &format!("{name}.g{g}.inter_out"), hidden, cg),
                })
                .collect(),
            group_channels: cg,
        }
    }

    fn param_count(c: usize, groups: usize, hidden: usize) -> usize {
        let cg = c / groups;
        groups
            * (2 * Gru::param_count(cg, hidden / 2)
                + Linear::param_count(hidden, cg)
                + Gru::param_count(cg, hidden)
                + Linear::param_count(hidden, cg))
    }

    fn forward<S: Real>(&self, t: &mut Tape<S>, p: &BoundParams, x: Var) -> Var {
        let cg = self.group_channels;
        // Intra-band pass: sequences over bands, one per frame.
        let mut parts = Vec::new();
        for (g, m) in self.groups.iter().enumerate() {
            let xg = t.narrow(x, 0, g * cg, cg);
            let seq = t.permute(xg, &[1, 2, 0]);
            let f = m.intra_fwd.forward(t, p, seq, false);
            let b = m.intra_bwd.forward(t, p, seq, true);
            let h = t.concat(&[f, b], 2);
            let h = m.intra_out.forward(t, p, h);
            parts.push(t.permute(h, &[2, 0, 1]));
        }
        let intra = t.concat(&parts, 0);
        let x = t.add(x, intra);
        // Inter-frame pass: sequences over frames, one per band.
        let mut parts = Vec::new();
        for (g, m) in self.groups.iter().enumerate() {
            let xg = t.narrow(x, 0, g * cg, cg);
            let seq = t.permute(xg, &[2, 1, 0]);
            let h = m.inter.forward(t, p, seq, false);
            let h = m.inter_out.forward(t, p, h);
            parts.push(t.permute(h, &[2, 1, 0]));
        }
        let inter = t.concat(&parts, 0);
        t.add(x, inter)
    }
}

#[derive(Clone, Debug)]
struct Layers {
    encoder: Vec<(Conv, Prelu)>,
    enc_gt: Vec<GtBlock>,
    dprnn: Vec<DprnnLayer>,
    dec_gt: Vec<GtBlock>,
    /// Mirrors `encoder`; the last entry produces the 2-channel mask.
    decoder: Vec<(Deconv, Option<Prelu>)>,
}

/// Spectral denoiser predicting a bounded complex ratio mask on ERB bands.
#[derive(Clone, Debug)]
pub struct Denoiser<S: Real> {
    cfg: DenoiserConfig,
    stft: StftConfig,
    bank: ErbFilterbank<S>,
    layers: Layers,
    pub params: ParamStore<S>,
}

impl<S: Real> Denoiser<S> {
    pub fn new(cfg: DenoiserConfig, stft: StftConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let bank = ErbFilterbank::new(stft.freq_bins(), cfg.erb_bands, stft.sample_rate)?;
        let mut params = ParamStore::new();
        let mut init = Init::new(&mut params, seed);
        let chans = &cfg.encoder_channels;
        let c = *chans.last().unwrap();
        let geom = ConvGeom::freq(KERNEL_F, 2, KERNEL_F / 2);
        let mut encoder = Vec::new();
        let mut prev = 3;
        for (i, &ch) in chans.iter().enumerate() {
            encoder.push((
                Conv::new(&mut init, &format!("encoder.conv{i}"), prev, ch, geom),
                Prelu::new(&mut init, &format!("encoder.act{i}"), ch),
            ));
            prev = ch;
        }
        let enc_gt = (0..cfg.gt_blocks)
            .map(|i| GtBlock::new(&mut init, &format!("encoder.gt{i}"), c, DenoiserConfig::gt_dilation(i)))
            .collect();
        let dprnn = (0..cfg.dprnn_layers)
            .map(|i| DprnnLayer::new(&mut init, &format!("dprnn.layer{i}"), c, cfg.dprnn_groups, cfg.dprnn_hidden))
            .collect();
        let dec_gt = (0..cfg.gt_blocks)
            .rev()
            .map(|i| GtBlock::new(&mut init, &format!("decoder.gt{i}"), c, DenoiserConfig::gt_dilation(i)))
            .collect();
        let mut decoder = Vec::new();
        for i in (0..chans.len()).rev() {
            let out = if i == 0 { 2 } else { chans[i - 1] };
            let deconv = Deconv::new(&mut init, &format!("decoder.deconv{i}"), chans[i], out, geom);
            let act = (i > 0).then(|| Prelu::new(&mut init, &format!("decoder.act{i}"), out));
            decoder.push((deconv, act));
        }
        // Start near a pass-through mask: real part high, imaginary part zero.
        let head = decoder.last().unwrap().0.b;
        init.store.get_mut(head).data_mut().copy_from_slice(&[S::from_f64_lossy(1.5), S::zero()]);
        let layers = Layers {
            encoder,
            enc_gt,
            dprnn,
            dec_gt,
            decoder,
        };
        Ok(Self {
            cfg,
            stft,
            bank,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft
    }

    /// Closed-form parameter count for a configuration.
    pub fn expected_param_count(cfg: &DenoiserConfig) -> usize {
        let geom = ConvGeom::freq(KERNEL_F, 2, KERNEL_F / 2);
        let chans = &cfg.encoder_channels;
        let c = *chans.last().unwrap();
        let mut n = 0;
        let mut prev = 3;
        for &ch in chans {
            n += Conv::param_count(prev, ch, &geom) + ch;
            prev = ch;
        }
        n += 2 * cfg.gt_blocks * GtBlock::param_count(c);
        n += cfg.dprnn_layers * DprnnLayer::param_count(c, cfg.dprnn_groups, cfg.dprnn_hidden);
        for i in (0..chans.len()).rev() {
            let out = if i == 0 { 2 } else { chans[i - 1] };
            n += Deconv::param_count(chans[i], out, &geom) + if i > 0 { out } else { 0 };
        }
        n
    }

    /// Magnitude, real and imaginary parts on ERB bands: `(3, bands, T)`.
    fn features(&self, y: &Tensor<S>) -> Tensor<S> {
        let (f2, t) = (y.dim(0), y.dim(1));
        let f = f2 / 2;
        let re = y.narrow(0, 0, f);
        let im = y.narrow(0, f, f);
        let mag = Tensor::from_vec(
            &[f, t],
            re.data().iter().zip(im.data()).map(|(&a, &b)| (a * a + b * b).sqrt()).collect(),
        );
        let p = self.bank.projection();
        let parts = [p.matmul(&mag), p.matmul(&re), p.matmul(&im)];
        let refs: Vec<&Tensor<S>> = parts.iter().collect();
        Tensor::concat(&refs, 0).reshaped(&[3, self.cfg.erb_bands, t])
    }

    /// Enhanced compressed spectrum `(2F, T)` for a compressed mixture `y`.
    /// Features are taken from the value of `y`; gradients reach the mixture
    /// only through the masking product.
    pub fn forward(&self, t: &mut Tape<S>, p: &BoundParams, y: Var) -> Result<Var> {
        let shape = t.shape(y).to_vec();
        let f = self.stft.freq_bins();
        if shape.len() != 2 || shape[0] != 2 * f {
            return Err(TseError::Shape(format!("denoiser expects (2x{f}, T), got {shape:?}")));
        }
        let frames = shape[1];
        let feats = self.features(t.value(y));
        let mut x = t.constant(feats);
        let mut heights = Vec::new();
        let mut skips = Vec::new();
        for (conv, act) in &self.layers.encoder {
            heights.push(t.shape(x)[1]);
            x = conv.forward(t, p, x);
            x = act.forward(t, p, x);
            skips.push(x);
        }
        for b in &self.layers.enc_gt {
            x = b.forward(t, p, x);
        }
        for l in &self.layers.dprnn {
            x = l.forward(t, p, x);
        }
        for b in &self.layers.dec_gt {
            x = b.forward(t, p, x);
        }
        for (deconv, act) in &self.layers.decoder {
            let skip = skips.pop().unwrap();
            let h = t.add(x, skip);
            x = deconv.forward(t, p, h, heights.pop().unwrap());
            x = match act {
                Some(a) => a.forward(t, p, x),
                None => t.tanh(x),
            };
        }
        let bands = self.cfg.erb_bands;
        let u = t.constant(self.bank.unprojection().clone());
        let mut halves = Vec::new();
        for ch in 0..2 {
            let m = t.narrow(x, 0, ch, 1);
            let m = t.reshape(m, &[bands, frames]);
            halves.push(t.matmul(u, m));
        }
        let mask = t.concat(&halves, 0);
        Ok(t.complex_mul(mask, y))
    }

    /// Inference without gradients.
    pub fn enhance(&self, y: &ComplexSpec<S>) -> Result<ComplexSpec<S>> {
        if !y.is_compressed() {
            return Err(TseError::InvalidState("denoiser expects a compressed spectrum".into()));
        }
        if y.config() != &self.stft {
            return Err(TseError::Shape("denoiser STFT configuration mismatch".into()));
        }
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let yv = t.constant(y.data().clone());
        let out = self.forward(&mut t, &p, yv)?;
        y.with_data(t.value(out).clone())
    }
}

impl<S: Real> SpecDenoiser<S> for Denoiser<S> {
    fn denoise(&self, y: &ComplexSpec<S>) -> Result<ComplexSpec<S>> {
        self.enhance(y)
    }
}

/// Smallest band height reached by the encoder.
pub fn bottleneck_bands(cfg: &DenoiserConfig) -> usize {
    cfg.encoder_channels
        .iter()
        .fold(cfg.erb_bands, |f, _| strided_height(f, KERNEL_F, 2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_and_count() {
        let d = Denoiser::<f32>::new(DenoiserConfig::default(), StftConfig::default(), 1).unwrap();
        assert_eq!(d.params.num_elements(), Denoiser::<f32>::expected_param_count(d.config()));
        assert_eq!(bottleneck_bands(d.config()), 16);
        let data = Tensor::from_vec(&[258, 126], (0..258 * 126).map(|i| ((i % 97) as f32 * 0.01).sin()).collect());
        let y = ComplexSpec::from_parts(data, StftConfig::default(), true, 8000).unwrap();
        let out = d.enhance(&y).unwrap();
        assert_eq!(out.data().shape(), &[258, 126]);
        assert!(out.data().is_finite());
    }

    #[test]
    fn rejects_uncompressed_and_bad_shapes() {
        let d = Denoiser::<f32>::new(DenoiserConfig::default(), StftConfig::default(), 1).unwrap();
        let y = ComplexSpec::<f32>::zeros(StftConfig::default(), 10, 576);
        assert!(matches!(d.enhance(&y), Err(TseError::InvalidState(_))));
        let mut t = Tape::new();
        let p = d.params.bind(&mut t, false);
        let bad = t.constant(Tensor::zeros(&[100, 10]));
        assert!(matches!(d.forward(&mut t, &p, bad), Err(TseError::Shape(_))));
    }

    #[test]
    fn invalid_configs() {
        let mut c = DenoiserConfig::default();
        c.dprnn_groups = 3;
        assert!(c.validate().is_err());
        let mut c = DenoiserConfig::default();
        c.gt_blocks = 0;
        assert!(c.validate().is_err());
    }
}
