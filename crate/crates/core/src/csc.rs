//! Convolutional sparse coding:
//!
//! ```text
//! minimize_x  1/2 |sum_k d_k * x_k - s|^2 + lambda sum_k |x_k|_1
//! ```
//!
//! solved by ADMM on the split `x = y`. The `x`-update is a `K x K`
//! diagonal-plus-rank-one system per frequency, solved in `O(K)`; the
//! `y`-update is soft thresholding.

use crate::admm::{diff_norm, norm, AdmmSettings, AdmmStatus, Penalty, Residuals};
use crate::dict::FilterBank;
use crate::error::{Error, Result};
use crate::rank_one::solve_shifted_rank_one;
use crate::spectral::{Complex64, Fft2d, ImagePlane, SpectrumPlane, SpectrumSet};

/// One coefficient map per filter, on the signal lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMaps {
    maps: Vec<ImagePlane>,
}

impl CoefficientMaps {
    pub fn new(maps: Vec<ImagePlane>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidParameter("at least one map required".into()))?;
        for m in &maps {
            first.check_same_dims(m)?;
        }
        Ok(Self { maps })
    }

    pub fn zeros(k: usize, height: usize, width: usize) -> Self {
        Self {
            maps: (0..k).map(|_| ImagePlane::zeros(height, width)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    pub fn maps(&self) -> &[ImagePlane] {
        &self.maps
    }

    pub fn map(&self, k: usize) -> &ImagePlane {
        &self.maps[k]
    }

    pub fn l1_norm(&self) -> f64 {
        self.maps.iter().map(ImagePlane::l1_norm).sum()
    }

    pub fn count_nonzero(&self) -> usize {
        self.maps
            .iter()
            .map(|m| m.as_slice().iter().filter(|v| **v != 0.0).count())
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.count_nonzero() == 0
    }

    pub fn spectra(&self, fft: &Fft2d) -> SpectrumSet {
        fft.forward_many(&self.maps)
    }
}

/// `sign(v) * max(|v| - theta, 0)`.
#[inline]
pub fn soft_threshold(v: f64, theta: f64) -> f64 {
    debug_assert!(theta >= 0.0);
    if v > theta {
        v - theta
    } else if v < -theta {
        v + theta
    } else {
        0.0
    }
}

/// Spectral data shared by every coding pass of one signal.
struct CodingProblem {
    fft: Fft2d,
    dict_hat: SpectrumSet,
    /// `conj(d_k^) s^` per filter.
    corr_hat: SpectrumSet,
}

impl CodingProblem {
    fn new(s: &ImagePlane, dict: &FilterBank) -> Result<Self> {
        let (h, w) = s.dims();
        let fft = Fft2d::new(h, w);
        let dict_hat = dict.spectra(&fft)?;
        let s_hat = fft.forward(s);
        let corr_hat = dict_hat
            .iter()
            .map(|dk| {
                let mut out = dk.clone();
                for (o, sv) in out.as_mut_slice().iter_mut().zip(s_hat.as_slice()) {
                    *o = o.conj() * sv;
                }
                out
            })
            .collect();
        Ok(Self {
            fft,
            dict_hat,
            corr_hat,
        })
    }

    fn lambda_max(&self) -> f64 {
        self.corr_hat
            .iter()
            .map(|c| {
                self.fft
                    .inverse_real(c.as_slice())
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .fold(0.0, f64::max)
    }
}

/// Largest correlation magnitude between the signal and any filter; the
/// smallest `lambda` for which all-zero maps are optimal.
pub fn lambda_max(s: &ImagePlane, dict: &FilterBank) -> Result<f64> {
    Ok(CodingProblem::new(s, dict)?.lambda_max())
}

/// `sum_k d_k * x_k` on the signal lattice.
pub fn reconstruct(dict: &FilterBank, maps: &CoefficientMaps) -> Result<ImagePlane> {
    if dict.len() != maps.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} maps", dict.len()),
            got: format!("{} maps", maps.len()),
        });
    }
    let (h, w) = maps.dims();
    let fft = Fft2d::new(h, w);
    let dict_hat = dict.spectra(&fft)?;
    let map_hat = maps.spectra(&fft);
    let mut sum = vec![Complex64::new(0.0, 0.0); h * w];
    for (dk, xk) in dict_hat.iter().zip(&map_hat) {
        for ((acc, a), b) in sum.iter_mut().zip(dk.as_slice()).zip(xk.as_slice()) {
            *acc += a * b;
        }
    }
    ImagePlane::new(h, w, fft.inverse_real(&sum))
}

/// `1/2 |sum_k d_k * x_k - s|^2 + lambda sum_k |x_k|_1`.
pub fn csc_objective(s: &ImagePlane, dict: &FilterBank, maps: &CoefficientMaps, lambda: f64) -> Result<f64> {
    s.check_same_dims(maps.map(0))?;
    let recon = reconstruct(dict, maps)?;
    Ok(0.5 * diff_norm(recon.as_slice(), s.as_slice()).powi(2) + lambda * maps.l1_norm())
}

/// Per-iteration record produced by [`csc_solve_traced`].
#[derive(Clone, Copy, Debug)]
pub struct CscIterate {
    pub rho: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Coding objective at the sparse iterate `y`.
    pub objective: f64,
    /// `rho (|y - y_prev|^2 + |u - u_prev|^2)`.
    pub step_energy: f64,
    /// Largest imaginary part dropped by the inverse transform of `x`.
    pub imag_residue: f64,
}

pub fn csc_solve(
    s: &ImagePlane,
    dict: &FilterBank,
    lambda: f64,
    settings: &AdmmSettings,
) -> Result<(CoefficientMaps, AdmmStatus)> {
    csc_solve_from(s, dict, lambda, settings, None)
}

/// As [`csc_solve`], starting `y` from `init` instead of zeros.
pub fn csc_solve_from(
    s: &ImagePlane,
    dict: &FilterBank,
    lambda: f64,
    settings: &AdmmSettings,
    init: Option<&CoefficientMaps>,
) -> Result<(CoefficientMaps, AdmmStatus)> {
    solve(s, dict, lambda, settings, init, None)
}

/// As [`csc_solve`], also returning one [`CscIterate`] per iteration.
pub fn csc_solve_traced(
    s: &ImagePlane,
    dict: &FilterBank,
    lambda: f64,
    settings: &AdmmSettings,
) -> Result<(CoefficientMaps, AdmmStatus, Vec<CscIterate>)> {
    let mut trace = Vec::new();
    let (maps, status) = solve(s, dict, lambda, settings, None, Some(&mut trace))?;
    Ok((maps, status, trace))
}

fn solve(
    s: &ImagePlane,
    dict: &FilterBank,
    lambda: f64,
    settings: &AdmmSettings,
    init: Option<&CoefficientMaps>,
    mut trace: Option<&mut Vec<CscIterate>>,
) -> Result<(CoefficientMaps, AdmmStatus)> {
    settings.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if s.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal"));
    }
    let (h, w) = s.dims();
    let k = dict.len();
    let p = h * w;
    let problem = CodingProblem::new(s, dict)?;

    // all-zero maps satisfy the optimality conditions exactly
    if lambda >= problem.lambda_max() {
        return Ok((
            CoefficientMaps::zeros(k, h, w),
            AdmmStatus {
                iterations: 0,
                converged: true,
                final_rho: settings.rho0,
                ..AdmmStatus::default()
            },
        ));
    }

    let mut y: Vec<Vec<f64>> = match init {
        Some(m) => {
            if m.len() != k || m.dims() != (h, w) {
                return Err(Error::DimensionMismatch {
                    expected: format!("{k} maps of {h}x{w}"),
                    got: format!("{} maps of {:?}", m.len(), m.dims()),
                });
            }
            m.maps().iter().map(|p| p.as_slice().to_vec()).collect()
        }
        None => vec![vec![0.0; p]; k],
    };
    let mut u: Vec<Vec<f64>> = vec![vec![0.0; p]; k];
    let mut x: Vec<Vec<f64>> = vec![vec![0.0; p]; k];
    let mut penalty = Penalty::new(settings);
    let relax = settings.relax;
    let n = k * p;

    let mut status = AdmmStatus {
        final_rho: penalty.rho,
        ..AdmmStatus::default()
    };

    let mut scratch = Scratch::new(k);

    for iter in 1..=settings.max_iter {
        let rho = penalty.rho;
        // x-update
        let targets: Vec<Vec<f64>> = y
            .iter()
            .zip(&u)
            .map(|(yk, uk)| yk.iter().zip(uk).map(|(a, b)| a - b).collect())
            .collect();
        let mut x_hat: Vec<Vec<Complex64>> = rayon_map(&targets, |t| problem.fft.forward_real(t));
        x_solve(&problem.dict_hat, &problem.corr_hat, rho, &mut x_hat, &mut scratch);
        let inverted: Vec<(Vec<f64>, f64)> =
            rayon_map(&x_hat, |spec| problem.fft.inverse_real_with_residue(spec));
        let mut imag_residue = 0.0f64;
        for (xk, (vals, res)) in x.iter_mut().zip(inverted) {
            *xk = vals;
            imag_residue = imag_residue.max(res);
        }

        // relaxed y-update and dual step
        let theta = lambda / rho;
        let y_prev = y.clone();
        let u_prev = if trace.is_some() { Some(u.clone()) } else { None };
        for j in 0..k {
            for i in 0..p {
                let xr = relax * x[j][i] + (1.0 - relax) * y_prev[j][i];
                let yv = soft_threshold(xr + u[j][i], theta);
                y[j][i] = yv;
                u[j][i] += xr - yv;
            }
        }

        let flat = |v: &Vec<Vec<f64>>| -> Vec<f64> { v.concat() };
        let (xf, yf, ypf, uf) = (flat(&x), flat(&y), flat(&y_prev), flat(&u));
        let primal = diff_norm(&xf, &yf);
        let dual = rho * diff_norm(&yf, &ypf);
        let res = Residuals::new(
            settings,
            n,
            primal,
            dual,
            norm(&xf).max(norm(&yf)),
            rho * norm(&uf),
        );
        status.iterations = iter;
        status.primal_residual = primal;
        status.dual_residual = dual;
        status.final_rho = rho;

        if let Some(tr) = trace.as_deref_mut() {
            let maps = CoefficientMaps {
                maps: y
                    .iter()
                    .map(|v| ImagePlane::new(h, w, v.clone()))
                    .collect::<Result<_>>()?,
            };
            let up = flat(u_prev.as_ref().expect("recorded when tracing"));
            let du = diff_norm(&uf, &up);
            tr.push(CscIterate {
                rho,
                primal_residual: primal,
                dual_residual: dual,
                objective: csc_objective(s, dict, &maps, lambda)?,
                step_energy: rho * (diff_norm(&yf, &ypf).powi(2) + du * du),
                imag_residue,
            });
        }

        if res.converged() {
            status.converged = true;
            break;
        }
        if let Some(scale) = penalty.adapt(&res) {
            for uk in u.iter_mut() {
                uk.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }

    let maps = CoefficientMaps {
        maps: y
            .into_iter()
            .map(|v| ImagePlane::new(h, w, v))
            .collect::<Result<_>>()?,
    };
    Ok((maps, status))
}

struct Scratch {
    a: Vec<Complex64>,
    rhs: Vec<Complex64>,
    sol: Vec<Complex64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        let zero = vec![Complex64::new(0.0, 0.0); k];
        Self {
            a: zero.clone(),
            rhs: zero.clone(),
            sol: zero,
        }
    }
}

/// Overwrites `target[k]` (the spectra of `y_k - u_k`) with the `x`-update
/// solution of `(conj(d) d^T + rho I) x = conj(d) s + rho target` per frequency.
fn x_solve(dict_hat: &[SpectrumPlane], corr_hat: &[SpectrumPlane], rho: f64, target: &mut [Vec<Complex64>], sc: &mut Scratch) {
    let k = dict_hat.len();
    for f in 0..dict_hat[0].len() {
        for j in 0..k {
            sc.a[j] = dict_hat[j].as_slice()[f];
            sc.rhs[j] = corr_hat[j].as_slice()[f] + target[j][f] * rho;
        }
        solve_shifted_rank_one(rho, &sc.a, &sc.rhs, &mut sc.sol);
        for j in 0..k {
            target[j][f] = sc.sol[j];
        }
    }
}

/// Frequency-domain `x`-update of the coding ADMM: per frequency, solves
/// `(conj(d) d^T + rho I) x = conj(d) s + rho t`.
pub fn x_update(dict_hat: &[SpectrumPlane], s_hat: &SpectrumPlane, t_hat: &[SpectrumPlane], rho: f64) -> Result<SpectrumSet> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let dims = s_hat.dims();
    if dict_hat.is_empty()
        || dict_hat.len() != t_hat.len()
        || dict_hat.iter().chain(t_hat).any(|p| p.dims() != dims)
    {
        return Err(Error::DimensionMismatch {
            expected: format!("{} spectra of {dims:?}", dict_hat.len()),
            got: format!("{} targets", t_hat.len()),
        });
    }
    let corr: SpectrumSet = dict_hat
        .iter()
        .map(|d| {
            let mut c = d.clone();
            for (cv, sv) in c.as_mut_slice().iter_mut().zip(s_hat.as_slice()) {
                *cv = cv.conj() * sv;
            }
            c
        })
        .collect();
    let mut target: Vec<Vec<Complex64>> = t_hat.iter().map(|t| t.as_slice().to_vec()).collect();
    x_solve(dict_hat, &corr, rho, &mut target, &mut Scratch::new(dict_hat.len()));
    target
        .into_iter()
        .map(|v| SpectrumPlane::new(dims.0, dims.1, v))
        .collect()
}

fn rayon_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}
