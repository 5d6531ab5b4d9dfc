//! Joint optimization of the per-sample dictionary `c` and the global
//! dictionary `d` after each sample is coded.
//!
//! The auxiliary pair `(f, g)` carries the quadratic terms and `(c, d)` the
//! constraint; both pairs are coupled by scaled duals `(u, v)`. Within an
//! iteration `f` sees the previous `g` through `z_k = g_k * x_k`, and `g`
//! sees the fresh `f` through a `beta` recomputed from the stored `N - 1`
//! history. Stored history changes only when the sample completes.

use crate::admm::{norm, AdmmStatus, Penalty, Residuals};
use crate::csc::CoefficientMaps;
use crate::error::{Error, Result};
use crate::history::{blend_alpha, blend_beta, HistoryPair};
use crate::rank_one::solve_diag_rank_one;
use crate::spectral::{Complex64, Fft2d, ImagePlane, SpectrumPlane, SpectrumSet};
use crate::state::{
    check_rho, fit_term, forward_planes, inverse_planes, pad_bank, project_padded, same_shape, OnlineState,
};

/// Exact per-frequency minimizer of
///
/// ```text
/// 1/(2N) sum_k |f_k x_k - z_k|^2 + 1/(2N) |sum_k f_k x_k - s|^2 + rho/2 sum_k |f_k - q_k|^2
/// ```
///
/// i.e. the solution of `(diag(|x_k|^2 + N rho) + conj(x) x^T) f = conj(x) (z + s) + N rho q`.
pub fn f_update(
    x_hat: &[SpectrumPlane],
    z_hat: &[SpectrumPlane],
    s_hat: &SpectrumPlane,
    q_hat: &[SpectrumPlane],
    n: u64,
    rho: f64,
) -> Result<SpectrumSet> {
    check_rho(rho)?;
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    same_shape(x_hat, z_hat)?;
    same_shape(x_hat, q_hat)?;
    let k = x_hat.len();
    let (h, w) = s_hat.dims();
    if x_hat[0].dims() != (h, w) {
        return Err(Error::dims((h, w), x_hat[0].dims()));
    }
    let n_rho = n as f64 * rho;
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
            diag[j] = xj.norm_sqr() + n_rho;
            rhs[j] = xj.conj() * (z_hat[j].as_slice()[p] + sp) + q_hat[j].as_slice()[p] * n_rho;
        }
        solve_diag_rank_one(&diag, 1.0, &a, &rhs, &mut sol);
        for j in 0..k {
            out[j].as_mut_slice()[p] = sol[j];
        }
    }
    Ok(out)
}

/// Exact minimizer of the history-weighted fit plus proximal term:
/// `g_k = (beta_k + rho w_k) / (alpha_k + rho)`.
pub fn g_update_alg1(history: &HistoryPair, w_hat: &[SpectrumPlane], rho: f64) -> Result<SpectrumSet> {
    check_rho(rho)?;
    if history.len() != w_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} planes", history.len()),
            got: format!("{} planes", w_hat.len()),
        });
    }
    Ok(history
        .alpha
        .iter()
        .zip(&history.beta)
        .zip(w_hat)
        .map(|((alpha, beta), wk)| {
            let mut out = wk.clone();
            for ((o, a), b) in out.as_mut_slice().iter_mut().zip(alpha.as_slice()).zip(beta.as_slice()) {
                *o = (b + *o * rho) / (a + rho);
            }
            out
        })
        .collect())
}

/// `beta^N = (N-1)/N beta^{N-1} + 1/N conj(x^N) (f^N x^N)`. The previous
/// history is left untouched.
pub fn beta_recompute(
    beta_prev: &[SpectrumPlane],
    x_hat: &[SpectrumPlane],
    f_hat: &[SpectrumPlane],
    n: u64,
) -> Result<SpectrumSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    same_shape(beta_prev, x_hat)?;
    same_shape(beta_prev, f_hat)?;
    let t_hat: SpectrumSet = f_hat
        .iter()
        .zip(x_hat)
        .map(|(f, x)| {
            let mut t = f.clone();
            for (tv, xv) in t.as_mut_slice().iter_mut().zip(x.as_slice()) {
                *tv *= xv;
            }
            t
        })
        .collect();
    let nf = n as f64;
    Ok(blend_beta(beta_prev, x_hat, &t_hat, (nf - 1.0) / nf, 1.0 / nf))
}

/// `alpha^N = (N-1)/N alpha^{N-1} + 1/N |x^N|^2`.
pub fn alpha_update(alpha_prev: &[ImagePlane], x_hat: &[SpectrumPlane], n: u64) -> Result<Vec<ImagePlane>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    if alpha_prev.len() != x_hat.len() || alpha_prev.iter().zip(x_hat).any(|(a, x)| a.dims() != x.dims()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{} planes", alpha_prev.len()),
            got: format!("{} planes", x_hat.len()),
        });
    }
    let nf = n as f64;
    Ok(blend_alpha(alpha_prev, x_hat, (nf - 1.0) / nf, 1.0 / nf))
}

/// Folds `|x^N|^2` into `alpha` ahead of [`dict_step_alg1`].
pub fn commit_alpha(history: &mut HistoryPair, x_hat: &[SpectrumPlane]) -> Result<()> {
    let n = history.sample_count + 1;
    history.alpha = alpha_update(&history.alpha, x_hat, n)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct DictStep {
    pub status: AdmmStatus,
    /// `1/2 |sum_k c_k * x_k - s|^2` for the final per-sample dictionary.
    pub fit_term: f64,
    /// Final per-sample dictionary `c^N`; not retained by the trainer.
    pub sample_dict: crate::dict::FilterBank,
}

/// One dictionary update for sample `N = history.sample_count + 1`.
///
/// Expects `alpha` to already include sample `N` (see [`commit_alpha`]) and
/// `beta` to hold `beta^{N-1}`. On return `d`, `beta` and `sample_count` are
/// advanced.
pub fn dict_step_alg1(state: &mut OnlineState, s: &ImagePlane, maps: &CoefficientMaps) -> Result<DictStep> {
    let settings = state.settings;
    settings.validate()?;
    let (h, w) = s.dims();
    let k = state.dict.len();
    let m = state.dict.side();
    if maps.len() != k || maps.dims() != (h, w) {
        return Err(Error::DimensionMismatch {
            expected: format!("{k} maps of {h}x{w}"),
            got: format!("{} maps of {:?}", maps.len(), maps.dims()),
        });
    }
    state.history.check_shape(k, h, w)?;
    let n = state.history.sample_count + 1;
    let p = h * w;
    let fft = Fft2d::new(h, w);
    let x_hat = maps.spectra(&fft);
    let s_hat = fft.forward(s);

    let mut d = pad_bank(&state.dict, h, w)?;
    let mut c = d.clone();
    let mut g_hat = forward_planes(&fft, &d);
    let mut g: Vec<Vec<f64>>;
    let mut f: Vec<Vec<f64>>;
    let mut f_hat: SpectrumSet = Vec::new();
    let mut u = vec![vec![0.0; p]; k];
    let mut v = vec![vec![0.0; p]; k];
    let mut penalty = Penalty::new(&settings);
    let relax = settings.relax;
    let mut status = AdmmStatus {
        final_rho: penalty.rho,
        ..AdmmStatus::default()
    };
    let live = |beta: SpectrumSet, history: &HistoryPair| HistoryPair {
        alpha: history.alpha.clone(),
        beta,
        sample_count: history.sample_count,
    };

    for iter in 1..=settings.max_iter {
        let rho = penalty.rho;

        let z_hat: SpectrumSet = g_hat
            .iter()
            .zip(&x_hat)
            .map(|(gk, xk)| {
                let mut z = gk.clone();
                for (zv, xv) in z.as_mut_slice().iter_mut().zip(xk.as_slice()) {
                    *zv *= xv;
                }
                z
            })
            .collect();
        let q: Vec<Vec<f64>> = sub(&c, &u);
        let q_hat = forward_planes(&fft, &q);
        f_hat = f_update(&x_hat, &z_hat, &s_hat, &q_hat, n, rho)?;
        f = inverse_planes(&fft, &f_hat);

        let beta_live = beta_recompute(&state.history.beta, &x_hat, &f_hat, n)?;
        let wv = sub(&d, &v);
        let w_hat = forward_planes(&fft, &wv);
        g_hat = g_update_alg1(&live(beta_live, &state.history), &w_hat, rho)?;
        g = inverse_planes(&fft, &g_hat);

        let c_prev = c.clone();
        let d_prev = d.clone();
        relaxed_projection(&f, &mut c, &mut u, relax, h, w, m);
        relaxed_projection(&g, &mut d, &mut v, relax, h, w, m);

        let primal = (sq_diff(&f, &c) + sq_diff(&g, &d)).sqrt();
        let dual = rho * (sq_diff(&c, &c_prev) + sq_diff(&d, &d_prev)).sqrt();
        let aux = (sq_norm(&f) + sq_norm(&g)).sqrt();
        let con = (sq_norm(&c) + sq_norm(&d)).sqrt();
        let duals = rho * (sq_norm(&u) + sq_norm(&v)).sqrt();
        let res = Residuals::new(&settings, 2 * k * p, primal, dual, aux.max(con), duals);
        status.iterations = iter;
        status.primal_residual = primal;
        status.dual_residual = dual;
        status.final_rho = rho;
        if res.converged() {
            status.converged = true;
            break;
        }
        if let Some(scale) = penalty.adapt(&res) {
            for plane in u.iter_mut().chain(v.iter_mut()) {
                plane.iter_mut().for_each(|x| *x *= scale);
            }
        }
    }

    state.history.beta = beta_recompute(&state.history.beta, &x_hat, &f_hat, n)?;
    state.history.sample_count = n;
    state.dict = crate::state::bank_from_padded(&d, h, w, m)?;
    let sample_dict = crate::state::bank_from_padded(&c, h, w, m)?;
    let fit = fit_term(&fft, &sample_dict, &x_hat, s)?;
    Ok(DictStep {
        status,
        fit_term: fit,
        sample_dict,
    })
}

fn sub(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

fn sq_norm(a: &[Vec<f64>]) -> f64 {
    a.iter().map(|x| norm(x).powi(2)).sum()
}

fn sq_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum()
}

/// `aux_r = relax aux + (1 - relax) con`, `con <- proj(aux_r + dual)`,
/// `dual += aux_r - con`.
pub(crate) fn relaxed_projection(
    aux: &[Vec<f64>],
    con: &mut [Vec<f64>],
    dual: &mut [Vec<f64>],
    relax: f64,
    h: usize,
    w: usize,
    m: usize,
) {
    for ((a, c), u) in aux.iter().zip(con.iter_mut()).zip(dual.iter_mut()) {
        let ar: Vec<f64> = a.iter().zip(c.iter()).map(|(x, y)| relax * x + (1.0 - relax) * y).collect();
        let target: Vec<f64> = ar.iter().zip(u.iter()).map(|(x, y)| x + y).collect();
        *c = project_padded(&target, h, w, m);
        for ((uv, arv), cv) in u.iter_mut().zip(&ar).zip(c.iter()) {
            *uv += arv - cv;
        }
    }
}
