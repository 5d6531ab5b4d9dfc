//! Per-frequency normal equations written out as dense matrices, and
//! history arrays summed directly over all samples.

use ocdl::{Complex64, SpectrumPlane};

use crate::dense::CMatrix;

type System = (CMatrix, Vec<Complex64>);

/// Coding `x`-update at one frequency: minimizer of
/// `1/2 |d^T x - s|^2 + rho/2 |x - t|^2`.
pub fn csc_x_system(d: &[Complex64], s: Complex64, t: &[Complex64], rho: f64) -> System {
    let k = d.len();
    let mut a = CMatrix::zeros(k);
    a.add_outer(d, 1.0);
    a.add_diagonal(&vec![rho; k]);
    let b = (0..k).map(|i| d[i].conj() * s + t[i] * rho).collect();
    (a, b)
}

/// Joint-algorithm `f`-update at one frequency: minimizer of
/// `1/(2N) sum_k |f_k x_k - z_k|^2 + 1/(2N) |x^T f - s|^2 + rho/2 |f - q|^2`,
/// scaled by `N`.
pub fn f_system(
    x: &[Complex64],
    z: &[Complex64],
    s: Complex64,
    q: &[Complex64],
    n: u64,
    rho: f64,
) -> System {
    let k = x.len();
    let nr = n as f64 * rho;
    let mut a = CMatrix::zeros(k);
    a.add_outer(x, 1.0);
    a.add_diagonal(&x.iter().map(|v| v.norm_sqr() + nr).collect::<Vec<_>>());
    let b = (0..k).map(|i| x[i].conj() * (z[i] + s) + q[i] * nr).collect();
    (a, b)
}

/// Joint-algorithm `g`-update for one filter at one frequency: minimizer of
/// `1/2 (alpha |g|^2 - 2 Re(conj(g) beta)) + rho/2 |g - w|^2`.
pub fn g_alg1_system(alpha: f64, beta: Complex64, w: Complex64, rho: f64) -> System {
    let mut a = CMatrix::zeros(1);
    a.add_diagonal(&[alpha + rho]);
    (a, vec![beta + w * rho])
}

/// Exact-latest `g`-update at one frequency: minimizer of
/// `1/(2N) |x^T g - s|^2 + 1/2 sum_k (alpha_k |g_k|^2 - 2 Re(conj(g_k) beta_k)) + rho/2 |g - e|^2`.
pub fn g_alg2_system(
    x: &[Complex64],
    s: Complex64,
    alpha: &[f64],
    beta: &[Complex64],
    e: &[Complex64],
    n: u64,
    rho: f64,
) -> System {
    let k = x.len();
    let inv_n = 1.0 / n as f64;
    let mut a = CMatrix::zeros(k);
    a.add_outer(x, inv_n);
    a.add_diagonal(&alpha.iter().map(|v| v + rho).collect::<Vec<_>>());
    let b = (0..k)
        .map(|i| x[i].conj() * s * inv_n + beta[i] + e[i] * rho)
        .collect();
    (a, b)
}

/// `sum_n A_p^n` and `sum_n b_p^n` with `A_p^n = conj(x^n(p)) x^n(p)^T` and
/// `b_p^n = conj(x^n(p)) s^n(p)`.
#[derive(Clone, Debug)]
pub struct FrequencyNormalSystem {
    pub k: usize,
    pub a: Vec<CMatrix>,
    pub b: Vec<Vec<Complex64>>,
    pub count: usize,
}

impl FrequencyNormalSystem {
    pub fn new(k: usize, frequencies: usize) -> Self {
        Self {
            k,
            a: vec![CMatrix::zeros(k); frequencies],
            b: vec![vec![Complex64::new(0.0, 0.0); k]; frequencies],
            count: 0,
        }
    }

    pub fn accumulate(&mut self, x_hat: &[SpectrumPlane], s_hat: &SpectrumPlane) {
        let mut chi = vec![Complex64::new(0.0, 0.0); self.k];
        for p in 0..self.a.len() {
            for (c, x) in chi.iter_mut().zip(x_hat) {
                *c = x.as_slice()[p];
            }
            self.a[p].add_outer(&chi, 1.0);
            let sp = s_hat.as_slice()[p];
            for (bv, c) in self.b[p].iter_mut().zip(&chi) {
                *bv += c.conj() * sp;
            }
        }
        self.count += 1;
    }

    /// Same statistics divided by the sample count.
    pub fn averaged(&self) -> Self {
        let w = 1.0 / self.count.max(1) as f64;
        Self {
            k: self.k,
            a: self
                .a
                .iter()
                .map(|m| CMatrix::from_fn(self.k, |i, j| m.get(i, j) * w))
                .collect(),
            b: self.b.iter().map(|v| v.iter().map(|c| c * w).collect()).collect(),
            count: self.count,
        }
    }
}

/// `(1/denom) sum_n |x_k^n|^2` per filter, flattened.
pub fn naive_alpha(x_hats: &[Vec<SpectrumPlane>], denom: f64) -> Vec<Vec<f64>> {
    let k = x_hats[0].len();
    let len = x_hats[0][0].len();
    (0..k)
        .map(|j| {
            (0..len)
                .map(|p| x_hats.iter().map(|x| x[j].as_slice()[p].norm_sqr()).sum::<f64>() / denom)
                .collect()
        })
        .collect()
}

/// `(1/denom) sum_n conj(x_k^n) t_k^n` per filter, flattened.
pub fn naive_beta(x_hats: &[Vec<SpectrumPlane>], t_hats: &[Vec<SpectrumPlane>], denom: f64) -> Vec<Vec<Complex64>> {
    let k = x_hats[0].len();
    let len = x_hats[0][0].len();
    (0..k)
        .map(|j| {
            (0..len)
                .map(|p| {
                    x_hats
                        .iter()
                        .zip(t_hats)
                        .map(|(x, t)| x[j].as_slice()[p].conj() * t[j].as_slice()[p])
                        .sum::<Complex64>()
                        / denom
                })
                .collect()
        })
        .collect()
}
