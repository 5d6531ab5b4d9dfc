//! Direct spatial-domain operators and a subgradient coding solver.

use ocdl::{CoefficientMaps, FilterBank, FilterSupport, ImagePlane};

use crate::{OracleError, Result};

/// Largest lattice the subgradient solver accepts.
pub const SUBGRADIENT_MAX_PIXELS: usize = 32 * 32;
pub const SUBGRADIENT_MAX_FILTERS: usize = 8;

/// `(d * x)(i, j) = sum_{a, b < m} d(a, b) x(i - a, j - b)`, circular.
pub fn spatial_convolve(d: &FilterSupport, x: &ImagePlane) -> ImagePlane {
    let (h, w) = x.dims();
    let m = d.side();
    ImagePlane::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for a in 0..m {
            for b in 0..m {
                acc += d.get(a, b) * x.get((i + h - a % h) % h, (j + w - b % w) % w);
            }
        }
        acc
    })
}

/// `(d . r)(i, j) = sum_{a, b < m} d(a, b) r(i + a, j + b)`, circular; the
/// adjoint of [`spatial_convolve`].
pub fn spatial_correlate(d: &FilterSupport, r: &ImagePlane) -> ImagePlane {
    let (h, w) = r.dims();
    let m = d.side();
    ImagePlane::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for a in 0..m {
            for b in 0..m {
                acc += d.get(a, b) * r.get((i + a) % h, (j + b) % w);
            }
        }
        acc
    })
}

/// `sum_k d_k * x_k` by direct summation.
pub fn spatial_reconstruct(dict: &FilterBank, maps: &[ImagePlane]) -> ImagePlane {
    let (h, w) = maps[0].dims();
    let mut out = vec![0.0; h * w];
    for (d, x) in dict.filters().iter().zip(maps) {
        for (o, v) in out.iter_mut().zip(spatial_convolve(d, x).as_slice()) {
            *o += v;
        }
    }
    ImagePlane::new(h, w, out).expect("finite sums")
}

/// Coding objective evaluated with spatial loops.
pub fn spatial_objective(s: &ImagePlane, dict: &FilterBank, maps: &[ImagePlane], lambda: f64) -> f64 {
    let recon = spatial_reconstruct(dict, maps);
    let fit: f64 = recon.as_slice().iter().zip(s.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
    0.5 * fit + lambda * maps.iter().map(ImagePlane::l1_norm).sum::<f64>()
}

/// Diminishing-step subgradient descent on the coding objective, starting
/// from zero and returning the best iterate seen. Uses the minimum-norm
/// subgradient, so entries at zero whose gradient lies inside
/// `[-lambda, lambda]` stay at zero.
pub fn subgradient_csc(s: &ImagePlane, dict: &FilterBank, lambda: f64, steps: usize) -> Result<CoefficientMaps> {
    let (h, w) = s.dims();
    if h * w > SUBGRADIENT_MAX_PIXELS || dict.len() > SUBGRADIENT_MAX_FILTERS {
        return Err(OracleError::TooLarge(format!(
            "{h}x{w} with {} filters exceeds the subgradient guard",
            dict.len()
        )));
    }
    let k = dict.len();
    let lipschitz: f64 = dict
        .filters()
        .iter()
        .map(|f| f.as_slice().iter().map(|v| v.abs()).sum::<f64>().powi(2))
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let step0 = 1.0 / lipschitz;
    let mut x: Vec<ImagePlane> = (0..k).map(|_| ImagePlane::zeros(h, w)).collect();
    let mut best = x.clone();
    let mut best_obj = spatial_objective(s, dict, &x, lambda);
    for t in 0..steps {
        let recon = spatial_reconstruct(dict, &x);
        let resid = ImagePlane::new(
            h,
            w,
            recon.as_slice().iter().zip(s.as_slice()).map(|(a, b)| a - b).collect(),
        )
        .expect("finite residual");
        let eta = step0 / ((t + 1) as f64).sqrt();
        for (xk, d) in x.iter_mut().zip(dict.filters()) {
            let grad = spatial_correlate(d, &resid);
            for (v, g) in xk.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                let sub = if *v > 0.0 {
                    g + lambda
                } else if *v < 0.0 {
                    g - lambda
                } else {
                    g - g.clamp(-lambda, lambda)
                };
                *v -= eta * sub;
            }
        }
        let obj = spatial_objective(s, dict, &x, lambda);
        if obj < best_obj {
            best_obj = obj;
            best = x.clone();
        }
    }
    CoefficientMaps::new(best).map_err(OracleError::Core)
}
