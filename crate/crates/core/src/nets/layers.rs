//! Parameterized building blocks shared by the denoiser and the backbone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tse_autograd::{lit, BoundParams, ConvGeom, ParamId, ParamStore, Tape, Tensor, Var};

use crate::dsp::Real;

/// Seeded parameter factory. Weights and biases are drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub struct Init<'a, S: Real> {
    pub store: &'a mut ParamStore<S>,
    rng: ChaCha8Rng,
}

impl<'a, S: Real> Init<'a, S> {
    pub fn new(store: &'a mut ParamStore<S>, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| S::from_f64_lossy(self.rng.random_range(-bound..bound)))
            .collect();
        self.store.add(name, Tensor::from_vec(shape, data))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, lit(value)))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub geom: ConvGeom,
}

impl Conv {
    pub fn new<S: Real>(init: &mut Init<S>, name: &str, cin: usize, cout: usize, geom: ConvGeom) -> Self {
        let fan_in = cin / geom.groups * geom.kernel_f * geom.kernel_t;
        Self {
            w: init.uniform(
                &format!("{name}.weight"),
                &[cout, cin / geom.groups, geom.kernel_f, geom.kernel_t],
                fan_in,
            ),
            b: init.uniform(&format!("{name}.bias"), &[cout], fan_in),
            geom,
        }
    }

    pub fn param_count(cin: usize, cout: usize, geom: &ConvGeom) -> usize {
        cout * (cin / geom.groups) * geom.kernel_f * geom.kernel_t + cout
    }

    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &BoundParams, x: Var) -> Var {
        t.conv2d(x, p.var(self.w), Some(p.var(self.b)), self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct Deconv {
    pub w: ParamId,
    pub b: ParamId,
    pub geom: ConvGeom,
}

impl Deconv {
    pub fn new<S: Real>(init: &mut Init<S>, name: &str, cin: usize, cout: usize, geom: ConvGeom) -> Self {
        let fan_in = cout / geom.groups * geom.kernel_f * geom.kernel_t;
        Self {
            w: init.uniform(
                &format!("{name}.weight"),
                &[cin, cout / geom.groups, geom.kernel_f, geom.kernel_t],
                fan_in,
            ),
            b: init.uniform(&format!("{name}.bias"), &[cout], fan_in),
            geom,
        }
    }

    pub fn param_count(cin: usize, cout: usize, geom: &ConvGeom) -> usize {
        cin * (cout / geom.groups) * geom.kernel_f * geom.kernel_t + cout
    }

    /// `out_pad_f` brings the output height to `target_f`.
    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &BoundParams, x: Var, target_f: usize) -> Var {
        let f = t.shape(x)[1];
        let base = (f - 1) * self.geom.stride_f + self.geom.kernel_f - 2 * self.geom.pad_f;
        assert!(target_f >= base && target_f - base < self.geom.stride_f.max(1), "deconv target height");
        let geom = self.geom.with_out_pad(target_f - base);
        t.conv_transpose2d(x, p.var(self.w), Some(p.var(self.b)), geom)
    }
}

#[derive(Clone, Debug)]
pub struct Prelu {
    pub a: ParamId,
}

impl Prelu {
    pub fn new<S: Real>(init: &mut Init<S>, name: &str, channels: usize) -> Self {
        Self {
            a: init.constant(&format!("{name}.slope"), &[channels], 0.25),
        }
    }

    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &BoundParams, x: Var) -> Var {
        t.prelu(x, p.var(self.a))
    }
}

/// Dense map over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<S: Real>(init: &mut Init<S>, name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            w: init.uniform(&format!("{name}.weight"), &[inputs, outputs], inputs),
            b: init.uniform(&format!("{name}.bias"), &[outputs], inputs),
            inputs,
            outputs,
        }
    }

    pub fn param_count(inputs: usize, outputs: usize) -> usize {
        inputs * outputs + outputs
    }

    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &BoundParams, x: Var) -> Var {
        let shape = t.shape(x).to_vec();
        let rows = shape.iter().product::<usize>() / self.inputs;
        let flat = t.reshape(x, &[rows, self.inputs]);
        let y = t.matmul(flat, p.var(self.w));
        let y = t.add_bias_last(y, p.var(self.b));
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.outputs;
        t.reshape(y, &out_shape)
    }
}

#[derive(Clone, Debug)]
pub struct Gru {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bx: ParamId,
    pub bh: ParamId,
}

impl Gru {
    pub fn new<S: Real>(init: &mut Init<S>, name: &str, inputs: usize, hidden: usize) -> Self {
        Self {
            wx: init.uniform(&format!("{name}.wx"), &[inputs, 3 * hidden], hidden),
            wh: init.uniform(&format!("{name}.wh"), &[hidden, 3 * hidden], hidden),
            bx: init.uniform(&format!("{name}.bx"), &[3 * hidden], hidden),
            bh: init.uniform(&format!("{name}.bh"), &[3 * hidden], hidden),
        }
    }

    pub fn param_count(inputs: usize, hidden: usize) -> usize {
        3 * hidden * (inputs + hidden + 2)
    }

    /// `x: (len, batch, in)` → `(len, batch, hidden)`.
    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &BoundParams, x: Var, reverse: bool) -> Var {
        t.gru(
            x,
            p.var(self.wx),
            p.var(self.wh),
            p.var(self.bx),
            p.var(self.bh),
            reverse,
        )
    }
}

/// Height after a stride-2, kernel-3 (or 5), "same"-padded frequency conv.
pub fn strided_height(f: usize, kernel: usize, stride: usize) -> usize {
    (f + 2 * (kernel / 2) - kernel) / stride + 1
}
