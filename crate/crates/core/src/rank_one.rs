//! Per-frequency solves of diagonal-plus-rank-one Hermitian systems via the
//! Sherman-Morrison identity.

use crate::spectral::Complex64;

/// Solves `(diag(diag) + weight * conj(a) a^T) y = rhs` in `O(K)`.
///
/// `diag` must be strictly positive and `weight` nonnegative; the matrix is
/// then Hermitian positive definite and the denominator is at least one.
pub fn solve_diag_rank_one(
    diag: &[f64],
    weight: f64,
    a: &[Complex64],
    rhs: &[Complex64],
    out: &mut [Complex64],
) {
    let k = diag.len();
    debug_assert!(a.len() == k && rhs.len() == k && out.len() == k);
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for j in 0..k {
        let inv = 1.0 / diag[j];
        num += a[j] * rhs[j] * inv;
        den += a[j].norm_sqr() * inv;
    }
    let coupling = num * (weight / (1.0 + weight * den));
    for j in 0..k {
        out[j] = (rhs[j] - a[j].conj() * coupling) / diag[j];
    }
}

/// Same system with a constant diagonal `shift`.
pub fn solve_shifted_rank_one(shift: f64, a: &[Complex64], rhs: &[Complex64], out: &mut [Complex64]) {
    let mut num = Complex64::new(0.0, 0.0);
    let mut energy = 0.0;
    for (aj, rj) in a.iter().zip(rhs) {
        num += aj * rj;
        energy += aj.norm_sqr();
    }
    let coupling = num / (shift + energy);
    for ((o, aj), rj) in out.iter_mut().zip(a).zip(rhs) {
        *o = (rj - aj.conj() * coupling) / shift;
    }
}
