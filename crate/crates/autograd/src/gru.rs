//! Fused GRU over a whole sequence with hand-written BPTT.
//!
//! Gate layout in the `3H` axis is `[reset, update, candidate]`:
//!
//! ```text
//! r  = sigmoid(x Wr + br_x + h Ur + br_h)
//! z  = sigmoid(x Wz + bz_x + h Uz + bz_h)
//! n  = tanh(x Wn + bn_x + r * (h Un + bn_h))
//! h' = (1 - z) * n + z * h
//! ```

use crate::scalar::{gemm, Scalar, Trans};
use crate::tensor::Tensor;

/// Per-step activations kept for the backward pass, each `(len, batch, hidden)`.
#[derive(Debug, Clone)]
pub struct GruCache<S> {
    r: Vec<S>,
    z: Vec<S>,
    n: Vec<S>,
    hn: Vec<S>,
}

fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

/// Runs the recurrence. `x: (len, batch, in)`, `wx: (in, 3h)`, `wh: (h, 3h)`,
/// `bx, bh: (3h)`. Returns `(len, batch, h)` outputs and the cache.
pub fn gru_forward<S: Scalar>(
    x: &Tensor<S>,
    wx: &Tensor<S>,
    wh: &Tensor<S>,
    bx: &Tensor<S>,
    bh: &Tensor<S>,
    reverse: bool,
) -> (Tensor<S>, GruCache<S>) {
    let (len, batch, input) = (x.dim(0), x.dim(1), x.dim(2));
    let h3 = wx.dim(1);
    let hid = h3 / 3;
    assert_eq!(wx.shape(), &[input, h3], "gru wx shape");
    assert_eq!(wh.shape(), &[hid, h3], "gru wh shape");
    assert_eq!(bx.len(), h3);
    assert_eq!(bh.len(), h3);

    // Input projections for all steps at once.
    let mut xw = vec![S::zero(); len * batch * h3];
    gemm(len * batch, input, h3, S::one(), x.data(), Trans::No, wx.data(), Trans::No, S::zero(), &mut xw);
    for row in xw.chunks_mut(h3) {
        for (v, &b) in row.iter_mut().zip(bx.data()) {
            *v += b;
        }
    }

    let step = batch * hid;
    let mut out = vec![S::zero(); len * step];
    let mut cache = GruCache {
        r: vec![S::zero(); len * step],
        z: vec![S::zero(); len * step],
        n: vec![S::zero(); len * step],
        hn: vec![S::zero(); len * step],
    };
    let mut hw = vec![S::zero(); batch * h3];
    let mut h_prev = vec![S::zero(); step];
    for s in 0..len {
        let t = if reverse { len - 1 - s } else { s };
        for row in hw.chunks_mut(h3) {
            row.copy_from_slice(bh.data());
        }
        gemm(batch, hid, h3, S::one(), &h_prev, Trans::No, wh.data(), Trans::No, S::one(), &mut hw);
        let xw_t = &xw[t * batch * h3..(t + 1) * batch * h3];
        for bi in 0..batch {
            for j in 0..hid {
                let gx = &xw_t[bi * h3..];
                let gh = &hw[bi * h3..];
                let r = sigmoid(gx[j] + gh[j]);
                let z = sigmoid(gx[hid + j] + gh[hid + j]);
                let hn = gh[2 * hid + j];
                let n = crate::scalar::tanh(gx[2 * hid + j] + r * hn);
                let idx = t * step + bi * hid + j;
                let hp = h_prev[bi * hid + j];
                let h = (S::one() - z) * n + z * hp;
                cache.r[idx] = r;
                cache.z[idx] = z;
                cache.n[idx] = n;
                cache.hn[idx] = hn;
                out[idx] = h;
            }
        }
        h_prev.copy_from_slice(&out[t * step..(t + 1) * step]);
    }
    (Tensor::from_vec(&[len, batch, hid], out), cache)
}

/// Gradients of [`gru_forward`]: `(dx, dwx, dwh, dbx, dbh)`.
#[allow(clippy::too_many_arguments)]
pub fn gru_backward<S: Scalar>(
    x: &Tensor<S>,
    wx: &Tensor<S>,
    wh: &Tensor<S>,
    out: &Tensor<S>,
    cache: &GruCache<S>,
    grad: &Tensor<S>,
    reverse: bool,
    need_x: bool,
) -> (Option<Tensor<S>>, Tensor<S>, Tensor<S>, Tensor<S>, Tensor<S>) {
    let (len, batch, input) = (x.dim(0), x.dim(1), x.dim(2));
    let h3 = wx.dim(1);
    let hid = h3 / 3;
    let step = batch * hid;
    let zero_h = vec![S::zero(); step];

    let mut dxw = vec![S::zero(); len * batch * h3];
    let mut dhw_all = vec![S::zero(); len * batch * h3];
    let mut dh_next = vec![S::zero(); step];

    for s in (0..len).rev() {
        let t = if reverse { len - 1 - s } else { s };
        let h_prev: &[S] = if s == 0 {
            &zero_h
        } else {
            let tp = if reverse { t + 1 } else { t - 1 };
            &out.data()[tp * step..(tp + 1) * step]
        };
        let g_t = &grad.data()[t * step..(t + 1) * step];
        let dxw_t = &mut dxw[t * batch * h3..(t + 1) * batch * h3];
        let dhw = &mut dhw_all[t * batch * h3..(t + 1) * batch * h3];
        for bi in 0..batch {
            for j in 0..hid {
                let k = bi * hid + j;
                let idx = t * step + k;
                let (r, z, n, hn) = (cache.r[idx], cache.z[idx], cache.n[idx], cache.hn[idx]);
                let dh = g_t[k] + dh_next[k];
                let dn = dh * (S::one() - z);
                let dz = dh * (h_prev[k] - n);
                let dn_pre = dn * (S::one() - n * n);
                let dr = dn_pre * hn;
                let dz_pre = dz * z * (S::one() - z);
                let dr_pre = dr * r * (S::one() - r);
                let row = bi * h3;
                dxw_t[row + j] = dr_pre;
                dxw_t[row + hid + j] = dz_pre;
                dxw_t[row + 2 * hid + j] = dn_pre;
                dhw[row + j] = dr_pre;
                dhw[row + hid + j] = dz_pre;
                dhw[row + 2 * hid + j] = dn_pre * r;
                dh_next[k] = dh * z;
            }
        }
        // dh_prev += dHW * Whᵀ
        gemm(batch, h3, hid, S::one(), dhw, Trans::No, wh.data(), Trans::Yes, S::one(), &mut dh_next);
    }

    // dWh = Σ_t h_prevᵀ dHW_t as one product over the shifted outputs.
    let mut h_prev_all = vec![S::zero(); len * step];
    for t in 0..len {
        let first = if reverse { t == len - 1 } else { t == 0 };
        if !first {
            let tp = if reverse { t + 1 } else { t - 1 };
            h_prev_all[t * step..(t + 1) * step].copy_from_slice(&out.data()[tp * step..(tp + 1) * step]);
        }
    }
    let mut dwh = Tensor::zeros(wh.shape());
    gemm(hid, len * batch, h3, S::one(), &h_prev_all, Trans::Yes, &dhw_all, Trans::No, S::zero(), dwh.data_mut());
    let mut dbh = vec![S::zero(); h3];
    for row in dhw_all.chunks(h3) {
        for (acc, &v) in dbh.iter_mut().zip(row) {
            *acc += v;
        }
    }

    let mut dwx = Tensor::zeros(wx.shape());
    gemm(input, len * batch, h3, S::one(), x.data(), Trans::Yes, &dxw, Trans::No, S::zero(), dwx.data_mut());
    let mut dbx = vec![S::zero(); h3];
    for row in dxw.chunks(h3) {
        for (acc, &v) in dbx.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let dx = need_x.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        gemm(len * batch, h3, input, S::one(), &dxw, Trans::No, wx.data(), Trans::Yes, S::zero(), dx.data_mut());
        dx
    });
    (
        dx,
        dwx,
        dwh,
        Tensor::from_vec(&[h3], dbx),
        Tensor::from_vec(&[h3], dbh),
    )
}
