//! Exact fit to the latest sample plus approximate history, followed by a
//! single-sample refit of the per-sample dictionary `c^N` that feeds the
//! history.
//!
//! Per sample: code `s^N` with `d`, update `d` by ADMM on
//!
//! ```text
//! 1/(2N) |sum_k g_k * x_k^N - s^N|^2 + 1/(2N) sum_{n<N} sum_k |g_k * x_k^n - r_k^n|^2,  g = d in Omega
//! ```
//!
//! then refit `c^N` to `s^N` alone with `x^N` fixed, then fold
//! `r_k^N = c_k^N * x_k^N` into the history.

use crate::admm::{AdmmSettings, AdmmStatus, Penalty, Residuals};
use crate::alg1::relaxed_projection;
use crate::csc::CoefficientMaps;
use crate::dict::FilterBank;
use crate::error::{Error, Result};
use crate::history::{blend_alpha, blend_beta, HistoryPair};
use crate::rank_one::{solve_diag_rank_one, solve_shifted_rank_one};
use crate::spectral::{Complex64, Fft2d, ImagePlane, SpectrumPlane, SpectrumSet};
use crate::state::{
    bank_from_padded, check_rho, fit_term, forward_planes, inverse_planes, pad_bank, same_shape, synthesize,
    OnlineState,
};

/// Per-frequency solution of
/// `(diag(alpha_k + rho) + (1/N) conj(x) x^T) g = (1/N) conj(x) s + beta + rho e`,
/// where `alpha`, `beta` hold the `N - 1` history.
pub fn g_update_alg2(
    x_hat: &[SpectrumPlane],
    s_hat: &SpectrumPlane,
    history: &HistoryPair,
    e_hat: &[SpectrumPlane],
    n: u64,
    rho: f64,
) -> Result<SpectrumSet> {
    check_rho(rho)?;
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    same_shape(x_hat, e_hat)?;
    same_shape(x_hat, &history.beta)?;
    let k = x_hat.len();
    let (h, w) = s_hat.dims();
    if x_hat[0].dims() != (h, w) {
        return Err(Error::dims((h, w), x_hat[0].dims()));
    }
    let inv_n = 1.0 / n as f64;
    let mut out: SpectrumSet = (0..k).map(|_| SpectrumPlane::zeros(h, w)).collect();
    let mut diag = vec![0.0; k];
    let mut a = vec![Complex64::new(0.0, 0.0); k];
    let mut rhs = vec![Complex64::new(0.0, 0.0); k];
    let mut sol = vec![Complex64::new(0.0, 0.0); k];
    for p in 0..h * w {
        let sp = s_hat.as_slice()[p];
        for j in 0..k {
            let xj = x_hat[j].as_slice()[p];
            a[j] = xj;
            diag[j] = history.alpha[j].as_slice()[p] + rho;
            rhs[j] = xj.conj() * sp * inv_n + history.beta[j].as_slice()[p] + e_hat[j].as_slice()[p] * rho;
        }
        solve_diag_rank_one(&diag, inv_n, &a, &rhs, &mut sol);
        for j in 0..k {
            out[j].as_mut_slice()[p] = sol[j];
        }
    }
    Ok(out)
}

/// Per-iteration record from [`d_update_alg2_traced`].
#[derive(Clone, Copy, Debug)]
pub struct DictIterate {
    pub rho: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Dictionary-update objective at the feasible iterate `d`, up to the
    /// constant contributed by past reconstructions.
    pub objective: f64,
    /// `rho (|d - d_prev|^2 + |v - v_prev|^2)`.
    pub step_energy: f64,
}

/// Dictionary update for sample `N = history.sample_count + 1`.
pub fn d_update_alg2(state: &OnlineState, s: &ImagePlane, maps: &CoefficientMaps) -> Result<(FilterBank, AdmmStatus)> {
    d_update(state, s, maps, None)
}

pub fn d_update_alg2_traced(
    state: &OnlineState,
    s: &ImagePlane,
    maps: &CoefficientMaps,
) -> Result<(FilterBank, AdmmStatus, Vec<DictIterate>)> {
    let mut trace = Vec::new();
    let (d, st) = d_update(state, s, maps, Some(&mut trace))?;
    Ok((d, st, trace))
}

fn check_maps(dict: &FilterBank, s: &ImagePlane, maps: &CoefficientMaps) -> Result<()> {
    let (h, w) = s.dims();
    if maps.len() != dict.len() || maps.dims() != (h, w) {
        return Err(Error::DimensionMismatch {
            expected: format!("{} maps of {h}x{w}", dict.len()),
            got: format!("{} maps of {:?}", maps.len(), maps.dims()),
        });
    }
    Ok(())
}

fn d_update(
    state: &OnlineState,
    s: &ImagePlane,
    maps: &CoefficientMaps,
    mut trace: Option<&mut Vec<DictIterate>>,
) -> Result<(FilterBank, AdmmStatus)> {
    let settings = state.settings;
    settings.validate()?;
    check_maps(&state.dict, s, maps)?;
    let (h, w) = s.dims();
    let k = state.dict.len();
    let m = state.dict.side();
    let p = h * w;
    state.history.check_shape(k, h, w)?;
    let n = state.history.sample_count + 1;
    let fft = Fft2d::new(h, w);
    let x_hat = maps.spectra(&fft);
    let s_hat = fft.forward(s);

    let mut d = pad_bank(&state.dict, h, w)?;
    let mut v = vec![vec![0.0; p]; k];
    let mut penalty = Penalty::new(&settings);
    let mut status = AdmmStatus {
        final_rho: penalty.rho,
        ..AdmmStatus::default()
    };

    for iter in 1..=settings.max_iter {
        let rho = penalty.rho;
        let e: Vec<Vec<f64>> = sub(&d, &v);
        let e_hat = forward_planes(&fft, &e);
        let g_hat = g_update_alg2(&x_hat, &s_hat, &state.history, &e_hat, n, rho)?;
        let g = inverse_planes(&fft, &g_hat);

        let d_prev = d.clone();
        let v_prev = trace.as_ref().map(|_| v.clone());
        relaxed_projection(&g, &mut d, &mut v, settings.relax, h, w, m);

        let primal = sq_diff(&g, &d).sqrt();
        let dual = rho * sq_diff(&d, &d_prev).sqrt();
        let res = Residuals::new(
            &settings,
            k * p,
            primal,
            dual,
            sq_norm(&g).sqrt().max(sq_norm(&d).sqrt()),
            rho * sq_norm(&v).sqrt(),
        );
        status.iterations = iter;
        status.primal_residual = primal;
        status.dual_residual = dual;
        status.final_rho = rho;

        if let Some(tr) = trace.as_deref_mut() {
            let d_hat = forward_planes(&fft, &d);
            let recon = fft.inverse_real(&synthesize(&d_hat, &x_hat));
            let latest: f64 = recon
                .iter()
                .zip(s.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / (2.0 * n as f64);
            let mut past = 0.0;
            for j in 0..k {
                for q in 0..p {
                    let dv = d_hat[j].as_slice()[q];
                    past += state.history.alpha[j].as_slice()[q] * dv.norm_sqr()
                        - 2.0 * (dv.conj() * state.history.beta[j].as_slice()[q]).re;
                }
            }
            let vp = v_prev.expect("recorded when tracing");
            tr.push(DictIterate {
                rho,
                primal_residual: primal,
                dual_residual: dual,
                objective: latest + past / (2.0 * p as f64),
                step_energy: rho * (sq_diff(&d, &d_prev) + sq_diff(&v, &vp)),
            });
        }

        if res.converged() {
            status.converged = true;
            break;
        }
        if let Some(scale) = penalty.adapt(&res) {
            v.iter_mut().for_each(|pl| pl.iter_mut().for_each(|x| *x *= scale));
        }
    }
    Ok((bank_from_padded(&d, h, w, m)?, status))
}

/// Single-sample refit of the per-sample dictionary with the maps fixed:
///
/// ```text
/// minimize_c  1/(2P) |sum_k c_k * x_k - s|^2   s.t. c_k in Omega
/// ```
///
/// The penalty on this `1/(2P)`-scaled objective is `rho / P`. Multiplying
/// the `g`-system by `P` gives `(conj(x) x^T + rho I) g = conj(x) s + rho (c - u)`,
/// and residuals are balanced in those units. The result never fits worse
/// than `d_init`.
pub fn c_update_alg2(
    s: &ImagePlane,
    maps: &CoefficientMaps,
    d_init: &FilterBank,
    settings: &AdmmSettings,
) -> Result<(FilterBank, AdmmStatus)> {
    settings.validate()?;
    check_maps(d_init, s, maps)?;
    let (h, w) = s.dims();
    let k = d_init.len();
    let m = d_init.side();
    let p = h * w;
    let fft = Fft2d::new(h, w);
    let x_hat = maps.spectra(&fft);
    let s_hat = fft.forward(s);
    let xs_hat: Vec<Vec<Complex64>> = x_hat
        .iter()
        .map(|x| x.as_slice().iter().zip(s_hat.as_slice()).map(|(a, b)| a.conj() * b).collect())
        .collect();

    let mut c = pad_bank(d_init, h, w)?;
    let mut u = vec![vec![0.0; p]; k];
    let mut penalty = Penalty::new(settings);
    let mut status = AdmmStatus {
        final_rho: penalty.rho,
        ..AdmmStatus::default()
    };
    let mut a = vec![Complex64::new(0.0, 0.0); k];
    let mut rhs = vec![Complex64::new(0.0, 0.0); k];
    let mut sol = vec![Complex64::new(0.0, 0.0); k];

    for iter in 1..=settings.max_iter {
        let rho = penalty.rho;
        let q = sub(&c, &u);
        let mut g_hat = forward_planes(&fft, &q);
        for f in 0..p {
            for j in 0..k {
                a[j] = x_hat[j].as_slice()[f];
                rhs[j] = xs_hat[j][f] + g_hat[j].as_slice()[f] * rho;
            }
            solve_shifted_rank_one(rho, &a, &rhs, &mut sol);
            for j in 0..k {
                g_hat[j].as_mut_slice()[f] = sol[j];
            }
        }
        let g = inverse_planes(&fft, &g_hat);
        let c_prev = c.clone();
        relaxed_projection(&g, &mut c, &mut u, settings.relax, h, w, m);

        let primal = sq_diff(&g, &c).sqrt();
        let dual = rho * sq_diff(&c, &c_prev).sqrt();
        let res = Residuals::new(
            settings,
            k * p,
            primal,
            dual,
            sq_norm(&g).sqrt().max(sq_norm(&c).sqrt()),
            rho * sq_norm(&u).sqrt(),
        );
        status.iterations = iter;
        status.primal_residual = primal;
        status.dual_residual = dual;
        status.final_rho = rho;
        if res.converged() {
            status.converged = true;
            break;
        }
        if let Some(scale) = penalty.adapt(&res) {
            u.iter_mut().for_each(|pl| pl.iter_mut().for_each(|x| *x *= scale));
        }
    }

    let fitted = bank_from_padded(&c, h, w, m)?;
    if fit_term(&fft, &fitted, &x_hat, s)? <= fit_term(&fft, d_init, &x_hat, s)? {
        Ok((fitted, status))
    } else {
        Ok((d_init.clone(), status))
    }
}

/// `r_k = c_k * x_k` in the frequency domain.
pub fn reconstruction_spectra(fft: &Fft2d, sample_dict: &FilterBank, x_hat: &[SpectrumPlane]) -> Result<SpectrumSet> {
    let c_hat = sample_dict.spectra(fft)?;
    Ok(c_hat
        .into_iter()
        .zip(x_hat)
        .map(|(mut c, x)| {
            for (cv, xv) in c.as_mut_slice().iter_mut().zip(x.as_slice()) {
                *cv *= xv;
            }
            c
        })
        .collect())
}

/// `alpha~^N = N/(N+1) alpha~^{N-1} + 1/(N+1) |x^N|^2` and the matching rule
/// for `beta~` with `conj(x^N) r^N`.
pub fn history_update_alg2(
    prev: &HistoryPair,
    x_hat: &[SpectrumPlane],
    r_hat: &[SpectrumPlane],
    n: u64,
) -> Result<HistoryPair> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    same_shape(&prev.beta, x_hat)?;
    same_shape(&prev.beta, r_hat)?;
    let nf = n as f64;
    let keep = nf / (nf + 1.0);
    let add = 1.0 / (nf + 1.0);
    Ok(HistoryPair {
        alpha: blend_alpha(&prev.alpha, x_hat, keep, add),
        beta: blend_beta(&prev.beta, x_hat, r_hat, keep, add),
        sample_count: n,
    })
}

/// Result of one full per-sample dictionary update.
#[derive(Clone, Debug)]
pub struct Alg2Step {
    pub d_status: AdmmStatus,
    pub c_status: AdmmStatus,
    /// `1/2 |sum_k c_k * x_k - s|^2` for the refitted `c^N`.
    pub fit_term: f64,
}

/// `d`-update, `c`-refit and history commit for one coded sample.
pub fn dict_step_alg2(state: &mut OnlineState, s: &ImagePlane, maps: &CoefficientMaps) -> Result<Alg2Step> {
    let (d_new, d_status) = d_update_alg2(state, s, maps)?;
    state.dict = d_new;
    let (c, c_status) = c_update_alg2(s, maps, &state.dict, &state.settings)?;
    let (h, w) = s.dims();
    let fft = Fft2d::new(h, w);
    let x_hat = maps.spectra(&fft);
    let r_hat = reconstruction_spectra(&fft, &c, &x_hat)?;
    let n = state.history.sample_count + 1;
    state.history = history_update_alg2(&state.history, &x_hat, &r_hat, n)?;
    Ok(Alg2Step {
        d_status,
        c_status,
        fit_term: fit_term(&fft, &c, &x_hat, s)?,
    })
}

fn sub(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

fn sq_norm(a: &[Vec<f64>]) -> f64 {
    a.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum()
}

fn sq_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum()
}
