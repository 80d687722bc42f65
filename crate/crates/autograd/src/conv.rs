//! Grouped 2-D convolution over `(channels, freq, time)` tensors.
//!
//! Striding is supported along frequency only; time uses dilation and
//! symmetric padding. Both directions go through im2col + GEMM.

use crate::scalar::{gemm, Scalar, Trans};
use crate::tensor::Tensor;

/// Geometry shared by [`conv2d`] and [`conv_transpose2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel_f: usize,
    pub kernel_t: usize,
    pub stride_f: usize,
    pub pad_f: usize,
    pub dilation_t: usize,
    pub pad_t: usize,
    pub groups: usize,
    /// Extra rows appended to the output of a transposed convolution.
    pub out_pad_f: usize,
}

impl ConvGeom {
    /// Frequency-only kernel, no time context.
    pub fn freq(kernel_f: usize, stride_f: usize, pad_f: usize) -> Self {
        Self {
            kernel_f,
            kernel_t: 1,
            stride_f,
            pad_f,
            dilation_t: 1,
            pad_t: 0,
            groups: 1,
            out_pad_f: 0,
        }
    }

    /// Time-only kernel with "same" padding.
    pub fn time(kernel_t: usize, dilation_t: usize) -> Self {
        assert!(kernel_t % 2 == 1, "same-padded time kernels must be odd");
        Self {
            kernel_f: 1,
            kernel_t,
            stride_f: 1,
            pad_f: 0,
            dilation_t,
            pad_t: dilation_t * (kernel_t - 1) / 2,
            groups: 1,
            out_pad_f: 0,
        }
    }

    pub fn pointwise() -> Self {
        Self::freq(1, 1, 0)
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_out_pad(mut self, out_pad_f: usize) -> Self {
        self.out_pad_f = out_pad_f;
        self
    }

    /// Output (freq, time) of a forward convolution on an `(f, t)` input.
    pub fn conv_out(&self, f: usize, t: usize) -> (usize, usize) {
        let span_t = self.dilation_t * (self.kernel_t - 1);
        assert!(
            f + 2 * self.pad_f >= self.kernel_f && t + 2 * self.pad_t > span_t,
            "conv input ({f}, {t}) smaller than kernel"
        );
        (
            (f + 2 * self.pad_f - self.kernel_f) / self.stride_f + 1,
            t + 2 * self.pad_t - span_t,
        )
    }

    /// Output (freq, time) of a transposed convolution on an `(f, t)` input.
    pub fn transpose_out(&self, f: usize, t: usize) -> (usize, usize) {
        let span_t = self.dilation_t * (self.kernel_t - 1);
        (
            (f - 1) * self.stride_f + self.kernel_f + self.out_pad_f - 2 * self.pad_f,
            t + span_t - 2 * self.pad_t,
        )
    }

    fn taps(&self) -> usize {
        self.kernel_f * self.kernel_t
    }
}

/// Unfolds `channels` image planes of size `img_f x img_t` onto a
/// `grid_f x grid_t` output grid.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    img: &[S],
    channels: usize,
    img_f: usize,
    img_t: usize,
    grid_f: usize,
    grid_t: usize,
    g: &ConvGeom,
    col: &mut [S],
) {
    let n = grid_f * grid_t;
    for c in 0..channels {
        let plane = &img[c * img_f * img_t..(c + 1) * img_f * img_t];
        for i in 0..g.kernel_f {
            for j in 0..g.kernel_t {
                let row = (c * g.kernel_f + i) * g.kernel_t + j;
                let dst = &mut col[row * n..(row + 1) * n];
                let shift = (j * g.dilation_t) as isize - g.pad_t as isize;
                let (lo, hi) = valid_range(shift, img_t, grid_t);
                for fo in 0..grid_f {
                    let fi = (fo * g.stride_f + i) as isize - g.pad_f as isize;
                    let out = &mut dst[fo * grid_t..(fo + 1) * grid_t];
                    if fi < 0 || fi as usize >= img_f || lo >= hi {
                        out.fill(S::zero());
                        continue;
                    }
                    let src = &plane[fi as usize * img_t..(fi as usize + 1) * img_t];
                    out[..lo].fill(S::zero());
                    let s0 = (lo as isize + shift) as usize;
                    out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    out[hi..].fill(S::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `img`.
#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(
    col: &[S],
    channels: usize,
    img_f: usize,
    img_t: usize,
    grid_f: usize,
    grid_t: usize,
    g: &ConvGeom,
    img: &mut [S],
) {
    let n = grid_f * grid_t;
    for c in 0..channels {
        let plane = &mut img[c * img_f * img_t..(c + 1) * img_f * img_t];
        for i in 0..g.kernel_f {
            for j in 0..g.kernel_t {
                let row = (c * g.kernel_f + i) * g.kernel_t + j;
                let src = &col[row * n..(row + 1) * n];
                let shift = (j * g.dilation_t) as isize - g.pad_t as isize;
                let (lo, hi) = valid_range(shift, img_t, grid_t);
                if lo >= hi {
                    continue;
                }
                for fo in 0..grid_f {
                    let fi = (fo * g.stride_f + i) as isize - g.pad_f as isize;
                    if fi < 0 || fi as usize >= img_f {
                        continue;
                    }
                    let dst = &mut plane[fi as usize * img_t..(fi as usize + 1) * img_t];
                    let s0 = (lo as isize + shift) as usize;
                    let seg = &src[fo * grid_t + lo..fo * grid_t + hi];
                    for (d, &v) in dst[s0..s0 + (hi - lo)].iter_mut().zip(seg) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Grid positions `to` in `[lo, hi)` for which `to + shift` lies inside `[0, img_t)`.
fn valid_range(shift: isize, img_t: usize, grid_t: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (img_t as isize - shift).clamp(0, grid_t as isize) as usize;
    (lo.min(grid_t), hi)
}

fn add_bias<S: Scalar>(out: &mut [S], bias: &[S], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

fn bias_grad<S: Scalar>(grad: &[S], channels: usize, plane: usize) -> Tensor<S> {
    let data = (0..channels)
        .map(|c| grad[c * plane..(c + 1) * plane].iter().copied().sum())
        .collect();
    Tensor::from_vec(&[channels], data)
}

/// `x: (cin, f, t)`, `w: (cout, cin / groups, kf, kt)`, `b: (cout)`.
pub fn conv2d<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: Option<&Tensor<S>>, g: &ConvGeom) -> Tensor<S> {
    let (cin, f, t) = (x.dim(0), x.dim(1), x.dim(2));
    let cout = w.dim(0);
    assert_eq!(w.shape(), &[cout, cin / g.groups, g.kernel_f, g.kernel_t], "conv2d weight shape");
    assert!(cin % g.groups == 0 && cout % g.groups == 0, "conv2d groups");
    let (fo, to) = g.conv_out(f, t);
    let (cig, cog) = (cin / g.groups, cout / g.groups);
    let k = cig * g.taps();
    let n = fo * to;
    let mut col = vec![S::zero(); k * n];
    let mut out = vec![S::zero(); cout * n];
    for grp in 0..g.groups {
        im2col(&x.data()[grp * cig * f * t..], cig, f, t, fo, to, g, &mut col);
        gemm(
            cog,
            k,
            n,
            S::one(),
            &w.data()[grp * cog * k..(grp + 1) * cog * k],
            Trans::No,
            &col,
            Trans::No,
            S::zero(),
            &mut out[grp * cog * n..(grp + 1) * cog * n],
        );
    }
    if let Some(b) = b {
        add_bias(&mut out, b.data(), n);
    }
    Tensor::from_vec(&[cout, fo, to], out)
}

/// Gradients of [`conv2d`] with respect to `(x, w, b)`.
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad: &Tensor<S>,
    g: &ConvGeom,
    need_x: bool,
) -> (Option<Tensor<S>>, Tensor<S>, Tensor<S>) {
    let (cin, f, t) = (x.dim(0), x.dim(1), x.dim(2));
    let cout = w.dim(0);
    let (fo, to) = (grad.dim(1), grad.dim(2));
    let (cig, cog) = (cin / g.groups, cout / g.groups);
    let k = cig * g.taps();
    let n = fo * to;
    let mut col = vec![S::zero(); k * n];
    let mut gw = Tensor::zeros(w.shape());
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    for grp in 0..g.groups {
        let gout = &grad.data()[grp * cog * n..(grp + 1) * cog * n];
        im2col(&x.data()[grp * cig * f * t..], cig, f, t, fo, to, g, &mut col);
        gemm(
            cog,
            n,
            k,
            S::one(),
            gout,
            Trans::No,
            &col,
            Trans::Yes,
            S::zero(),
            &mut gw.data_mut()[grp * cog * k..(grp + 1) * cog * k],
        );
        if let Some(gx) = gx.as_mut() {
            gemm(
                k,
                cog,
                n,
                S::one(),
                &w.data()[grp * cog * k..(grp + 1) * cog * k],
                Trans::Yes,
                gout,
                Trans::No,
                S::zero(),
                &mut col,
            );
            col2im(&col, cig, f, t, fo, to, g, &mut gx.data_mut()[grp * cig * f * t..]);
        }
    }
    let gb = bias_grad(grad.data(), cout, n);
    (gx, gw, gb)
}

/// `x: (cin, f, t)`, `w: (cin, cout / groups, kf, kt)`, `b: (cout)`.
pub fn conv_transpose2d<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: Option<&Tensor<S>>,
    g: &ConvGeom,
) -> Tensor<S> {
    let (cin, f, t) = (x.dim(0), x.dim(1), x.dim(2));
    assert_eq!(w.dim(0), cin, "conv_transpose2d weight shape");
    assert!(cin % g.groups == 0, "conv_transpose2d groups");
    let cog = w.dim(1);
    let cout = cog * g.groups;
    assert_eq!(w.shape(), &[cin, cog, g.kernel_f, g.kernel_t]);
    let (fo, to) = g.transpose_out(f, t);
    debug_assert_eq!(g.conv_out(fo, to), (f, t));
    let cig = cin / g.groups;
    let k = cog * g.taps();
    let n = f * t;
    let mut col = vec![S::zero(); k * n];
    let mut out = vec![S::zero(); cout * fo * to];
    for grp in 0..g.groups {
        gemm(
            k,
            cig,
            n,
            S::one(),
            &w.data()[grp * cig * k..(grp + 1) * cig * k],
            Trans::Yes,
            &x.data()[grp * cig * n..(grp + 1) * cig * n],
            Trans::No,
            S::zero(),
            &mut col,
        );
        col2im(&col, cog, fo, to, f, t, g, &mut out[grp * cog * fo * to..]);
    }
    if let Some(b) = b {
        add_bias(&mut out, b.data(), fo * to);
    }
    Tensor::from_vec(&[cout, fo, to], out)
}

/// Gradients of [`conv_transpose2d`] with respect to `(x, w, b)`.
pub fn conv_transpose2d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad: &Tensor<S>,
    g: &ConvGeom,
    need_x: bool,
) -> (Option<Tensor<S>>, Tensor<S>, Tensor<S>) {
    let (cin, f, t) = (x.dim(0), x.dim(1), x.dim(2));
    let cog = w.dim(1);
    let cout = cog * g.groups;
    let (fo, to) = (grad.dim(1), grad.dim(2));
    let cig = cin / g.groups;
    let k = cog * g.taps();
    let n = f * t;
    let mut col = vec![S::zero(); k * n];
    let mut gw = Tensor::zeros(w.shape());
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    for grp in 0..g.groups {
        im2col(&grad.data()[grp * cog * fo * to..], cog, fo, to, f, t, g, &mut col);
        let xg = &x.data()[grp * cig * n..(grp + 1) * cig * n];
        gemm(
            cig,
            n,
            k,
            S::one(),
            xg,
            Trans::No,
            &col,
            Trans::Yes,
            S::zero(),
            &mut gw.data_mut()[grp * cig * k..(grp + 1) * cig * k],
        );
        if let Some(gx) = gx.as_mut() {
            gemm(
                cig,
                k,
                n,
                S::one(),
                &w.data()[grp * cig * k..(grp + 1) * cig * k],
                Trans::No,
                &col,
                Trans::No,
                S::zero(),
                &mut gx.data_mut()[grp * cig * n..(grp + 1) * cig * n],
            );
        }
    }
    let gb = bias_grad(grad.data(), cout, fo * to);
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) * scale).collect())
    }

    /// Direct nested-loop convolution used as an independent reference.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, g: &ConvGeom) -> Tensor<f64> {
        let (cin, f, t) = (x.dim(0), x.dim(1), x.dim(2));
        let cout = w.dim(0);
        let (fo, to) = g.conv_out(f, t);
        let cig = cin / g.groups;
        let cog = cout / g.groups;
        let mut out = Tensor::zeros(&[cout, fo, to]);
        for co in 0..cout {
            let grp = co / cog;
            for a in 0..fo {
                for b in 0..to {
                    let mut acc = 0.0;
                    for ci in 0..cig {
                        for i in 0..g.kernel_f {
                            for j in 0..g.kernel_t {
                                let fi = (a * g.stride_f + i) as isize - g.pad_f as isize;
                                let ti = (b + j * g.dilation_t) as isize - g.pad_t as isize;
                                if fi < 0 || ti < 0 || fi as usize >= f || ti as usize >= t {
                                    continue;
                                }
                                let xv = x.data()[((grp * cig + ci) * f + fi as usize) * t + ti as usize];
                                let wv = w.data()[((co * cig + ci) * g.kernel_f + i) * g.kernel_t + j];
                                acc += xv * wv;
                            }
                        }
                    }
                    out.data_mut()[(co * fo + a) * to + b] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut g = ConvGeom::freq(3, 2, 1);
        g.kernel_t = 3;
        g.dilation_t = 2;
        g.pad_t = 2;
        g.groups = 2;
        let x = ramp(&[4, 7, 6], 0.1);
        let w = ramp(&[6, 2, 3, 3], 0.05);
        let got = conv2d(&x, &w, None, &g);
        let want = naive_conv(&x, &w, &g);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with the same weights.
        let g = ConvGeom::freq(5, 2, 2).with_groups(1);
        let x = ramp(&[3, 9, 4], 0.3);
        let w = ramp(&[2, 3, 5, 1], 0.2);
        let y = conv2d(&x, &w, None, &g);
        let probe = ramp(y.shape(), 0.7);
        // transposed weight layout is (cin_of_T = cout_of_conv, cout_of_T, kf, kt)
        let xt = conv_transpose2d(&probe, &w, None, &g);
        assert_eq!(xt.shape(), x.shape());
        let lhs: f64 = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn transpose_output_padding_restores_even_length() {
        let g = ConvGeom::freq(5, 2, 2).with_out_pad(1);
        let (f, _) = g.transpose_out(32, 10);
        assert_eq!(f, 64);
        assert_eq!(ConvGeom::freq(5, 2, 2).conv_out(64, 10).0, 32);
    }
}
