//! Oracles shared by the integration suites.
#![allow(dead_code)]

use lgtse::dsp::{ComplexSpec, DrcConfig, Real, StftConfig};
use lgtse::guidance::{context_interaction_on_tape, InteractionConfig};
use lgtse::metrics::NegSiSdrOp;
use lgtse::pipeline::Frontend;
use tse_autograd::{Tape, Tensor};

/// Tiny analysis grid: 8-sample window, 5 bins, 10 rows.
pub fn tiny_stft() -> StftConfig {
    StftConfig::new(8000, 8, 4).unwrap()
}

pub fn tiny_spec(cols: usize, vals: &[f64]) -> ComplexSpec<f64> {
    let cfg = tiny_stft();
    let data = Tensor::from_vec(&[2 * cfg.freq_bins(), cols], vals.to_vec());
    ComplexSpec::from_parts(data, cfg, true, 4 * (cols - 1)).unwrap()
}

/// Triple-loop reference for `E softmax(Eᵀ Y)` on row-major `(rows, cols)` data.
pub fn brute_force_interaction(e: &[f64], y: &[f64], rows: usize, te: usize, ty: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * ty];
    for j in 0..ty {
        let logits: Vec<f64> = (0..te)
            .map(|i| (0..rows).map(|r| e[r * te + i] * y[r * ty + j]).sum())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        for r in 0..rows {
            out[r * ty + j] = (0..te).map(|i| e[r * te + i] * (logits[i] - m).exp() / z).sum();
        }
    }
    out
}

/// Xorshift values in [-1, 1].
pub fn pseudo_random(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 20001) as f64 / 10000.0 - 1.0
        })
        .collect()
}

/// Loss of interaction, tanh mask, synthesis and SI-SDR. Inputs: E, Y, W.
pub fn pipeline_loss<S: Real>(inputs: &[Tensor<S>], reference: &[S]) -> (f64, Vec<Tensor<S>>) {
    let frontend = Frontend::<S>::new(tiny_stft(), DrcConfig::default());
    let mut t = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| t.leaf(x.clone(), true)).collect();
    let (e, y, w) = (vars[0], vars[1], vars[2]);
    let g = context_interaction_on_tape(&mut t, e, y, InteractionConfig::default()).unwrap();
    let stacked = t.concat(&[y, g], 0);
    let logits = t.matmul(w, stacked);
    let m = t.tanh(logits);
    let est = t.complex_mul(m, y);
    let wav = frontend.synthesize_on_tape(&mut t, est, reference.len());
    let loss = NegSiSdrOp::apply(&mut t, wav, reference).unwrap();
    let value = t.value(loss).data()[0].to_f64_lossy();
    let mut grads = t.backward(loss);
    (value, vars.iter().map(|&v| grads.take(v).unwrap()).collect())
}

/// E `(10, 3)`, Y `(10, 5)`, W `(10, 20)` and a 16-sample reference.
pub fn pipeline_inputs(seed: u64) -> (Vec<Tensor<f64>>, Vec<f64>) {
    let v = pseudo_random(seed, 30 + 50 + 200 + 16);
    let e = Tensor::from_vec(&[10, 3], v[..30].to_vec());
    let y = Tensor::from_vec(&[10, 5], v[30..80].to_vec());
    let w = Tensor::from_vec(&[10, 20], v[80..280].iter().map(|x| 0.5 * x).collect());
    (vec![e, y, w], v[280..].to_vec())
}

/// Central differences in f64 for every input coordinate.
pub fn numeric_grads(inputs: &[Tensor<f64>], reference: &[f64]) -> Vec<Vec<f64>> {
    let h = 1e-6;
    (0..inputs.len())
        .map(|k| {
            (0..inputs[k].len())
                .map(|i| {
                    let mut plus = inputs.to_vec();
                    plus[k].data_mut()[i] += h;
                    let mut minus = inputs.to_vec();
                    minus[k].data_mut()[i] -= h;
                    (pipeline_loss(&plus, reference).0 - pipeline_loss(&minus, reference).0) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

/// `‖a − n‖ / ‖n‖`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let num: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = numeric.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Worst f64 and f32 relative gradient errors over the three inputs.
pub fn pipeline_gradient_errors(seed: u64) -> (f64, f64) {
    let (inputs, reference) = pipeline_inputs(seed);
    let numeric = numeric_grads(&inputs, &reference);
    let (_, g64) = pipeline_loss(&inputs, &reference);
    let in32: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast()).collect();
    let ref32: Vec<f32> = reference.iter().map(|&v| v as f32).collect();
    let (_, g32) = pipeline_loss(&in32, &ref32);
    let (mut w64, mut w32) = (0.0f64, 0.0f64);
    for k in 0..inputs.len() {
        w64 = w64.max(rel_err(g64[k].data(), &numeric[k]));
        let a32: Vec<f64> = g32[k].data().iter().map(|&v| v as f64).collect();
        w32 = w32.max(rel_err(&a32, &numeric[k]));
    }
    (w64, w32)
}
