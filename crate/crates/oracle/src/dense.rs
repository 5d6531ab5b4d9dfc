//! Dense complex linear algebra for small systems.

use ocdl::Complex64;

use crate::{OracleError, Result};

/// Row-major square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> Complex64) -> Self {
        Self {
            n,
            data: (0..n * n).map(|i| f(i / n, i % n)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    pub fn add_at(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.n + j] += v;
    }

    /// Adds `w * conj(a) a^T`.
    pub fn add_outer(&mut self, a: &[Complex64], w: f64) {
        for i in 0..self.n {
            for j in 0..self.n {
                self.data[i * self.n + j] += a[i].conj() * a[j] * w;
            }
        }
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, v) in d.iter().enumerate() {
            self.data[i * self.n + i] += v;
        }
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// Largest `|A_ij - conj(A_ji)|`.
    pub fn hermitian_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// Smallest Rayleigh quotient over `trials` deterministic probe vectors;
    /// negative values expose indefiniteness.
    pub fn min_rayleigh(&self, probes: &[Vec<Complex64>]) -> f64 {
        probes
            .iter()
            .map(|v| {
                let av = self.mul_vec(v);
                let num: Complex64 = v.iter().zip(&av).map(|(a, b)| a.conj() * b).sum();
                let den: f64 = v.iter().map(|a| a.norm_sqr()).sum();
                num.re / den
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &CMatrix, b: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = a.dim();
    if b.len() != n {
        return Err(OracleError::Shape(format!("matrix is {n}x{n}, vector has {}", b.len())));
    }
    let scale = a.max_abs();
    if scale == 0.0 {
        return Err(OracleError::Singular);
    }
    let mut m = a.data.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].norm().total_cmp(&m[j * n + col].norm()))
            .expect("nonempty range");
        if m[pivot * n + col].norm() <= 1e-14 * scale {
            return Err(OracleError::Singular);
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            x.swap(col, pivot);
        }
        let inv = m[col * n + col].inv();
        for row in col + 1..n {
            let factor = m[row * n + col] * inv;
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in col..n {
                let v = m[col * n + j];
                m[row * n + j] -= factor * v;
            }
            let xv = x[col];
            x[row] -= factor * xv;
        }
    }
    for row in (0..n).rev() {
        let mut acc = x[row];
        for j in row + 1..n {
            acc -= m[row * n + j] * x[j];
        }
        x[row] = acc / m[row * n + row];
    }
    Ok(x)
}

/// `|A x - b| / |b|` (or `|A x - b|` when `b = 0`).
pub fn relative_residual(a: &CMatrix, x: &[Complex64], b: &[Complex64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if nb > 0.0 {
        r / nb
    } else {
        r
    }
}

/// `(A + rho I)^{-1}`, column by column.
pub fn shifted_inverse(a: &CMatrix, rho: f64) -> Result<CMatrix> {
    let n = a.dim();
    let mut shifted = a.clone();
    shifted.add_diagonal(&vec![rho; n]);
    let mut inv = CMatrix::zeros(n);
    for j in 0..n {
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[j] = Complex64::new(1.0, 0.0);
        let col = dense_solve(&shifted, &e)?;
        for i in 0..n {
            inv.data[i * n + j] = col[i];
        }
    }
    Ok(inv)
}
