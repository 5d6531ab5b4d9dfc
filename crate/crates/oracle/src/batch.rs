//! Tiny batch dictionary learning: alternate coding of every sample with a
//! dictionary update that solves the accumulated per-frequency normal
//! equations densely.

use ocdl::{csc_objective, csc_solve, AdmmSettings, Complex64, Fft2d, FilterBank, FilterSupport, ImagePlane, SpectrumPlane};

use crate::dense::{shifted_inverse, CMatrix};
use crate::systems::FrequencyNormalSystem;
use crate::{OracleError, Result};

pub const BATCH_MAX_SAMPLES: usize = 8;
pub const BATCH_MAX_FILTERS: usize = 8;
pub const BATCH_MAX_PIXELS: usize = 64 * 64;
pub const DEFAULT_ALTERNATIONS: usize = 20;

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub dict: FilterBank,
    /// Mean coding objective over the samples under the final dictionary.
    pub mean_objective: f64,
}

/// Crop to the `m x m` corner and scale into the unit ball.
fn project(plane: &[f64], w: usize, m: usize) -> Vec<f64> {
    let mut taps: Vec<f64> = (0..m * m).map(|i| plane[(i / m) * w + i % m]).collect();
    let norm = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1.0 {
        taps.iter_mut().for_each(|v| *v /= norm);
    }
    taps
}

fn pad(taps: &[f64], h: usize, w: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for (i, v) in taps.iter().enumerate() {
        out[(i / m) * w + i % m] = *v;
    }
    out
}

/// Dictionary update for fixed maps: ADMM on `g = d`, the `g`-step solving
/// `(A_p + rho I) g_p = b_p + rho (d_p - v_p)` with a dense inverse per
/// frequency, the `d`-step projecting `g + v`.
pub fn dictionary_fit(
    normal: &FrequencyNormalSystem,
    init: &FilterBank,
    h: usize,
    w: usize,
    settings: &AdmmSettings,
) -> Result<FilterBank> {
    let k = init.len();
    let m = init.side();
    let p = h * w;
    let fft = Fft2d::new(h, w);
    let mut d: Vec<Vec<f64>> = init.filters().iter().map(|f| pad(f.as_slice(), h, w, m)).collect();
    let mut v = vec![vec![0.0; p]; k];
    let mut rho = settings.rho0;
    let mut inverses = invert_all(&normal.a, rho)?;
    let mut changes = 0;
    for _ in 0..settings.max_iter {
        let e_hat: Vec<Vec<Complex64>> = d
            .iter()
            .zip(&v)
            .map(|(dk, vk)| fft.forward_real(&dk.iter().zip(vk).map(|(a, b)| a - b).collect::<Vec<_>>()))
            .collect();
        let mut g_hat = vec![vec![Complex64::new(0.0, 0.0); p]; k];
        for f in 0..p {
            let rhs: Vec<Complex64> = (0..k).map(|j| normal.b[f][j] + e_hat[j][f] * rho).collect();
            for (j, val) in inverses[f].mul_vec(&rhs).into_iter().enumerate() {
                g_hat[j][f] = val;
            }
        }
        let g: Vec<Vec<f64>> = g_hat.iter().map(|s| fft.inverse_real(s)).collect();
        let d_prev = d.clone();
        for j in 0..k {
            let sum: Vec<f64> = g[j].iter().zip(&v[j]).map(|(a, b)| a + b).collect();
            d[j] = pad(&project(&sum, w, m), h, w, m);
            for i in 0..p {
                v[j][i] += g[j][i] - d[j][i];
            }
        }
        let sq = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
                .sum::<f64>()
                .sqrt()
        };
        let zeros = vec![vec![0.0; p]; k];
        let primal = sq(&g, &d);
        let dual = rho * sq(&d, &d_prev);
        let root_n = ((k * p) as f64).sqrt();
        let eps_pri = root_n * settings.eps_abs + settings.eps_rel * sq(&g, &zeros).max(sq(&d, &zeros));
        let eps_dual = root_n * settings.eps_abs + settings.eps_rel * rho * sq(&v, &zeros);
        if primal <= eps_pri && dual <= eps_dual {
            break;
        }
        if settings.vary_penalty.enabled && changes < settings.max_penalty_changes {
            let mu = settings.vary_penalty.mu;
            let tau = settings.vary_penalty.tau;
            let scale = if primal > mu * dual {
                Some(tau)
            } else if dual > mu * primal {
                Some(1.0 / tau)
            } else {
                None
            };
            if let Some(sc) = scale {
                rho *= sc;
                v.iter_mut().for_each(|vk| vk.iter_mut().for_each(|x| *x /= sc));
                inverses = invert_all(&normal.a, rho)?;
                changes += 1;
            }
        }
    }
    let filters = d
        .iter()
        .map(|dk| {
            let taps: Vec<f64> = (0..m * m).map(|i| dk[(i / m) * w + i % m]).collect();
            FilterSupport::new(m, taps)
        })
        .collect::<ocdl::Result<Vec<_>>>()?;
    Ok(FilterBank::new(filters)?)
}

fn invert_all(a: &[CMatrix], rho: f64) -> Result<Vec<CMatrix>> {
    a.iter().map(|m| shifted_inverse(m, rho)).collect()
}

/// Batch learning over at most 8 samples of at most 64x64 with at most 8
/// filters: `alternations` rounds of coding every sample, then refitting
/// the dictionary to the averaged normal equations.
pub fn batch_cdl_tiny(
    images: &[ImagePlane],
    init: &FilterBank,
    lambda: f64,
    settings: &AdmmSettings,
    alternations: usize,
) -> Result<BatchResult> {
    let first = images
        .first()
        .ok_or_else(|| OracleError::TooLarge("empty dataset".into()))?;
    let (h, w) = first.dims();
    if images.len() > BATCH_MAX_SAMPLES || init.len() > BATCH_MAX_FILTERS || h * w > BATCH_MAX_PIXELS {
        return Err(OracleError::TooLarge(format!(
            "{} samples of {h}x{w} with {} filters exceeds the batch guard",
            images.len(),
            init.len()
        )));
    }
    if images.iter().any(|s| s.dims() != (h, w)) {
        return Err(OracleError::Shape("samples differ in size".into()));
    }
    let fft = Fft2d::new(h, w);
    let s_hats: Vec<SpectrumPlane> = images.iter().map(|s| fft.forward(s)).collect();
    let mut dict = init.clone();
    for _ in 0..alternations {
        let mut normal = FrequencyNormalSystem::new(dict.len(), h * w);
        for (s, s_hat) in images.iter().zip(&s_hats) {
            let (maps, _) = csc_solve(s, &dict, lambda, settings)?;
            normal.accumulate(&maps.spectra(&fft), s_hat);
        }
        dict = dictionary_fit(&normal.averaged(), &dict, h, w, settings)?;
    }
    let mut total = 0.0;
    for s in images {
        let (maps, _) = csc_solve(s, &dict, lambda, settings)?;
        total += csc_objective(s, &dict, &maps, lambda)?;
    }
    Ok(BatchResult {
        mean_objective: total / images.len() as f64,
        dict,
    })
}
