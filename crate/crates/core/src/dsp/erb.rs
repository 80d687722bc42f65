use nalgebra::DMatrix;
use tse_autograd::{lit, Tensor};

use super::{ComplexSpec, Real};
use crate::error::{Result, TseError};

/// ERB-rate (Glasberg & Moore) of a frequency in Hz.
fn hz_to_erb(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

fn erb_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// Triangular filterbank from `F` linear bins onto `bands` ERB-spaced bands.
///
/// Band centres sit on individual bins at low frequency, where ERB spacing
/// would be finer than the bin spacing, and follow the ERB-rate scale
/// above. Each band's triangle spans its two neighbours' centres, so any
/// bin touches at most two adjacent bands.
#[derive(Clone, Debug, PartialEq)]
pub struct ErbFilterbank<S> {
    bins: usize,
    bands: usize,
    centers: Vec<f64>,
    /// `(bands, F)`, rows nonnegative and summing to one.
    project: Tensor<S>,
    /// `(F, bands)`, right pseudo-inverse of `project`.
    unproject: Tensor<S>,
}

impl<S: Real> ErbFilterbank<S> {
    pub fn new(bins: usize, bands: usize, sample_rate: u32) -> Result<Self> {
        if bands < 2 || bands >= bins {
            return Err(TseError::InvalidInput(format!(
                "ERB band count {bands} must be in [2, {bins})"
            )));
        }
        let centers = band_centers(bins, bands, sample_rate as f64 / 2.0);
        let w = triangles(bins, &centers);
        let u = right_pseudo_inverse(&w, bands, bins)?;
        Ok(Self {
            bins,
            bands,
            centers,
            project: Tensor::from_vec(&[bands, bins], w.iter().map(|&v| lit(v)).collect()),
            unproject: Tensor::from_vec(&[bins, bands], u.iter().map(|&v| lit(v)).collect()),
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Centre of each band in (fractional) bin units.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn projection(&self) -> &Tensor<S> {
        &self.project
    }

    pub fn unprojection(&self) -> &Tensor<S> {
        &self.unproject
    }

    /// `(F, T) -> (bands, T)`.
    pub fn project(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.ndim() != 2 || x.dim(0) != self.bins {
            return Err(TseError::Shape(format!("expected ({}, T), got {:?}", self.bins, x.shape())));
        }
        Ok(self.project.matmul(x))
    }

    /// `(bands, T) -> (F, T)`.
    pub fn unproject(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.ndim() != 2 || x.dim(0) != self.bands {
            return Err(TseError::Shape(format!("expected ({}, T), got {:?}", self.bands, x.shape())));
        }
        Ok(self.unproject.matmul(x))
    }
}

/// Bin-linear centres up to the first point where ERB spacing reaches one
/// bin, ERB-rate spacing from there to the top bin.
fn band_centers(bins: usize, bands: usize, nyquist: f64) -> Vec<f64> {
    let hz_per_bin = nyquist / (bins - 1) as f64;
    let top = (bins - 1) as f64;
    for linear in 1..bands {
        let rest = bands - linear;
        let start = (linear - 1) as f64;
        let e0 = hz_to_erb(start * hz_per_bin);
        let e1 = hz_to_erb(top * hz_per_bin);
        let mut centers: Vec<f64> = (0..linear).map(|b| b as f64).collect();
        centers.extend((1..=rest).map(|j| erb_to_hz(e0 + (e1 - e0) * j as f64 / rest as f64) / hz_per_bin));
        if centers.windows(2).all(|w| w[1] - w[0] >= 1.0 - 1e-9) {
            return centers;
        }
    }
    unreachable!("a single ERB band always fits above the linear region")
}

fn triangles(bins: usize, centers: &[f64]) -> Vec<f64> {
    let bands = centers.len();
    let mut w = vec![0.0; bands * bins];
    for b in 0..bands {
        let c = centers[b];
        let lo = if b == 0 { c - 1.0 } else { centers[b - 1] };
        let hi = if b + 1 == bands { c + 1.0 } else { centers[b + 1] };
        for k in 0..bins {
            let x = k as f64;
            let v = if x <= lo || x >= hi {
                0.0
            } else if x <= c {
                (x - lo) / (c - lo)
            } else {
                (hi - x) / (hi - c)
            };
            w[b * bins + k] = v;
        }
        let total: f64 = w[b * bins..(b + 1) * bins].iter().sum();
        for v in &mut w[b * bins..(b + 1) * bins] {
            *v /= total;
        }
    }
    w
}

/// `Wᵀ (W Wᵀ)⁻¹`, so that `W U = I` and `W U W = W`.
fn right_pseudo_inverse(w: &[f64], bands: usize, bins: usize) -> Result<Vec<f64>> {
    let wm = DMatrix::from_row_slice(bands, bins, w);
    let gram = &wm * wm.transpose();
    let inv = gram
        .cholesky()
        .ok_or_else(|| TseError::InvalidInput("ERB filterbank is rank deficient".into()))?
        .inverse();
    let u = wm.transpose() * inv;
    Ok((0..bins).flat_map(|r| (0..bands).map(move |c| (r, c))).map(|(r, c)| u[(r, c)]).collect())
}

/// Projects the magnitude of `s` onto ERB bands: `(bands, T)`.
pub fn erb_project<S: Real>(s: &ComplexSpec<S>, bank: &ErbFilterbank<S>) -> Result<Tensor<S>> {
    bank.project(&s.magnitude())
}

/// Maps a banded `(bands, T)` feature back to `(F, T)` bins.
pub fn erb_unproject<S: Real>(banded: &Tensor<S>, bank: &ErbFilterbank<S>) -> Result<Tensor<S>> {
    bank.unproject(banded)
}
