use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Global L2 norm over a set of gradient tensors.
pub fn global_norm<S: Scalar>(grads: &[Tensor<S>]) -> S {
    grads.iter().map(Tensor::sum_sq).sum::<S>().sqrt()
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Tensor<S>], max_norm: S) -> S {
    let norm = global_norm(grads);
    if norm > max_norm {
        let c = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(c);
        }
    }
    norm
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new<P: Scalar>(params: &ParamStore<P>) -> Self {
        let zeros: Vec<Tensor<S>> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Restores state saved with [`Adam::state`].
    pub fn from_state(step: u64, m: Vec<Tensor<S>>, v: Vec<Tensor<S>>) -> Self {
        assert_eq!(m.len(), v.len());
        Self {
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
            step,
            m,
            v,
        }
    }

    pub fn state(&self) -> (u64, &[Tensor<S>], &[Tensor<S>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &[Tensor<S>], lr: S) {
        assert_eq!(grads.len(), self.m.len(), "gradient count does not match optimizer state");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(crate::ParamId(i));
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (S::one() - self.beta1) * gv;
                *vv = self.beta2 * *vv + (S::one() - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
