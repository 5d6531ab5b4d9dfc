//! Frequency-domain sufficient statistics carried between samples.

use crate::error::{Error, Result};
use crate::spectral::{ImagePlane, SpectrumPlane, SpectrumSet};

/// Per-filter running averages `alpha_k` (of `|x_k^|^2`) and `beta_k` (of
/// `conj(x_k^)` times a reconstruction spectrum).
///
/// The normalization depends on the algorithm: `1/N` for the joint variant
/// and `1/(N+1)` for the exact-latest variant.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryPair {
    pub alpha: Vec<ImagePlane>,
    pub beta: SpectrumSet,
    /// Number of samples folded into both arrays.
    pub sample_count: u64,
}

impl HistoryPair {
    pub fn zeros(k: usize, height: usize, width: usize) -> Self {
        Self {
            alpha: (0..k).map(|_| ImagePlane::zeros(height, width)).collect(),
            beta: (0..k).map(|_| SpectrumPlane::zeros(height, width)).collect(),
            sample_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.alpha[0].dims()
    }

    /// Number of scalars held, counting a complex value as two.
    pub fn scalar_count(&self) -> usize {
        let (h, w) = self.dims();
        3 * self.len() * h * w
    }

    pub fn check_shape(&self, k: usize, height: usize, width: usize) -> Result<()> {
        let shape_ok = self.alpha.len() == k
            && self.beta.len() == k
            && self.alpha.iter().all(|a| a.dims() == (height, width))
            && self.beta.iter().all(|b| b.dims() == (height, width));
        if !shape_ok {
            return Err(Error::DimensionMismatch {
                expected: format!("{k} history planes of {height}x{width}"),
                got: format!("{} planes of {:?}", self.alpha.len(), self.alpha.first().map(|a| a.dims())),
            });
        }
        Ok(())
    }
}

/// `keep * prev + add * |x^|^2`, per filter.
pub(crate) fn blend_alpha(prev: &[ImagePlane], x_hat: &[SpectrumPlane], keep: f64, add: f64) -> Vec<ImagePlane> {
    prev.iter()
        .zip(x_hat)
        .map(|(a, x)| {
            let (h, w) = a.dims();
            let data = a
                .as_slice()
                .iter()
                .zip(x.as_slice())
                .map(|(av, xv)| keep * av + add * xv.norm_sqr())
                .collect();
            ImagePlane::new(h, w, data).expect("finite history")
        })
        .collect()
}

/// `keep * prev + add * conj(x^) * r^`, per filter.
pub(crate) fn blend_beta(
    prev: &[SpectrumPlane],
    x_hat: &[SpectrumPlane],
    recon_hat: &[SpectrumPlane],
    keep: f64,
    add: f64,
) -> SpectrumSet {
    prev.iter()
        .zip(x_hat)
        .zip(recon_hat)
        .map(|((b, x), r)| {
            let mut out = b.clone();
            for ((o, xv), rv) in out.as_mut_slice().iter_mut().zip(x.as_slice()).zip(r.as_slice()) {
                *o = *o * keep + xv.conj() * rv * add;
            }
            out
        })
        .collect()
}
