//! Trainer state shared by both online algorithms, plus the plane helpers
//! their inner loops use.

use rayon::prelude::*;

use crate::admm::AdmmSettings;
use crate::dict::{project_support_in_place, FilterBank};
use crate::error::{Error, Result};
use crate::history::HistoryPair;
use crate::spectral::{Complex64, Fft2d, FilterSupport, ImagePlane, SpectrumPlane, SpectrumSet};

/// Everything that survives from one sample to the next: the dictionary and
/// two `K x P` history arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineState {
    pub dict: FilterBank,
    pub history: HistoryPair,
    pub lambda: f64,
    pub settings: AdmmSettings,
}

pub type Alg1State = OnlineState;
pub type Alg2State = OnlineState;

impl OnlineState {
    pub fn new(dict: FilterBank, height: usize, width: usize, lambda: f64, settings: AdmmSettings) -> Self {
        let history = HistoryPair::zeros(dict.len(), height, width);
        Self {
            dict,
            history,
            lambda,
            settings,
        }
    }

    /// Scalars held across samples: `K m^2` filter taps plus `3 K P` history
    /// values (complex counted twice).
    pub fn persistent_scalars(&self) -> usize {
        let m = self.dict.side();
        self.dict.len() * m * m + self.history.scalar_count()
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")))
    }
}

pub(crate) fn same_shape(a: &[SpectrumPlane], b: &[SpectrumPlane]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.dims() != y.dims()) || a.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} planes of {:?}", a.len(), a.first().map(|p| p.dims())),
            got: format!("{} planes of {:?}", b.len(), b.first().map(|p| p.dims())),
        });
    }
    Ok(())
}

pub(crate) fn pad_bank(dict: &FilterBank, h: usize, w: usize) -> Result<Vec<Vec<f64>>> {
    Ok(dict.padded(h, w)?.into_iter().map(ImagePlane::into_vec).collect())
}

pub(crate) fn forward_planes(fft: &Fft2d, planes: &[Vec<f64>]) -> SpectrumSet {
    let (h, w) = fft.dims();
    planes
        .par_iter()
        .map(|p| SpectrumPlane::new(h, w, fft.forward_real(p)).expect("lattice-sized buffer"))
        .collect()
}

pub(crate) fn inverse_planes(fft: &Fft2d, spectra: &[SpectrumPlane]) -> Vec<Vec<f64>> {
    spectra.par_iter().map(|s| fft.inverse_real(s.as_slice())).collect()
}

/// Projection of a full-lattice plane onto the feasible set, returned
/// zero-padded.
pub(crate) fn project_padded(values: &[f64], h: usize, w: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let mut taps = Vec::with_capacity(m * m);
    for r in 0..m {
        taps.extend_from_slice(&values[r * w..r * w + m]);
    }
    project_support_in_place(&mut taps);
    for r in 0..m {
        out[r * w..r * w + m].copy_from_slice(&taps[r * m..(r + 1) * m]);
    }
    out
}

pub(crate) fn bank_from_padded(planes: &[Vec<f64>], h: usize, w: usize, m: usize) -> Result<FilterBank> {
    debug_assert!(planes.iter().all(|p| p.len() == h * w));
    let filters = planes
        .iter()
        .map(|p| {
            let mut taps = Vec::with_capacity(m * m);
            for r in 0..m {
                taps.extend_from_slice(&p[r * w..r * w + m]);
            }
            FilterSupport::new(m, taps)
        })
        .collect::<Result<Vec<_>>>()?;
    FilterBank::new(filters)
}

/// `sum_k conj-free products d_k^ x_k^` for one frequency-domain reconstruction.
pub(crate) fn synthesize(dict_hat: &[SpectrumPlane], x_hat: &[SpectrumPlane]) -> Vec<Complex64> {
    let mut acc = vec![Complex64::new(0.0, 0.0); dict_hat[0].len()];
    for (d, x) in dict_hat.iter().zip(x_hat) {
        for ((a, dv), xv) in acc.iter_mut().zip(d.as_slice()).zip(x.as_slice()) {
            *a += dv * xv;
        }
    }
    acc
}

/// `1/2 |sum_k d_k * x_k - s|^2` from map spectra.
pub(crate) fn fit_term(fft: &Fft2d, dict: &FilterBank, x_hat: &[SpectrumPlane], s: &ImagePlane) -> Result<f64> {
    let dict_hat = dict.spectra(fft)?;
    let recon = fft.inverse_real(&synthesize(&dict_hat, x_hat));
    Ok(0.5
        * recon
            .iter()
            .zip(s.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>())
}
