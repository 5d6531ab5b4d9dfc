//! Real 2-D DFT on a periodic lattice, circular convolution/correlation and
//! filter zero-padding.
//!
//! The forward transform is unnormalized and the inverse carries the `1/P`
//! factor, `P = H * W`. Every frequency-domain formula elsewhere in the crate
//! is written against this single convention.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

pub use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// Real-valued `H x W` grid stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "lattice must be nonempty, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", height * width),
                got: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image plane"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "empty lattice");
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut plane = Self::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                plane.data[r * width + c] = f(r, c);
            }
        }
        plane
    }

    /// Unit impulse at `(row, col)`.
    pub fn delta(height: usize, width: usize, row: usize, col: usize) -> Self {
        let mut plane = Self::zeros(height, width);
        plane.data[row * width + col] = 1.0;
        plane
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_same_dims(&self, other: &ImagePlane) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

/// Complex `H x W` spectrum stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumPlane {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

/// `K` spectra on a common lattice, one per filter or map.
pub type SpectrumSet = Vec<SpectrumPlane>;

impl SpectrumPlane {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", height * width),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[u * self.width + v]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Largest violation of `X(-p) = conj(X(p))` relative to the spectrum's
    /// peak magnitude.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        let (h, w) = self.dims();
        let scale = self.data.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for u in 0..h {
            for v in 0..w {
                let mirror = self.get((h - u) % h, (w - v) % w);
                worst = worst.max((self.get(u, v) - mirror.conj()).norm());
            }
        }
        worst / scale
    }
}

/// Square `m x m` filter support.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSupport {
    side: usize,
    data: Vec<f64>,
}

impl FilterSupport {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidParameter("filter side must be positive".into()));
        }
        if data.len() != side * side {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", side * side),
                got: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("filter support"));
        }
        Ok(Self { side, data })
    }

    pub fn zeros(side: usize) -> Self {
        Self {
            side,
            data: vec![0.0; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.side + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Planned forward/inverse 2-D transforms for one lattice size.
#[derive(Clone)]
pub struct Fft2d {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Fft2d {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "empty lattice");
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            col_fwd: planner.plan_fft_forward(height),
            row_inv: planner.plan_fft_inverse(width),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn transform(&self, buf: &mut [Complex64], row: &dyn Fft<f64>, col: &dyn Fft<f64>) {
        let (h, w) = (self.height, self.width);
        if w > 1 {
            row.process(buf);
        }
        if h > 1 {
            let mut t = vec![Complex64::new(0.0, 0.0); h * w];
            for r in 0..h {
                for c in 0..w {
                    t[c * h + r] = buf[r * w + c];
                }
            }
            col.process(&mut t);
            for c in 0..w {
                for r in 0..h {
                    buf[r * w + c] = t[c * h + r];
                }
            }
        }
    }

    /// Unnormalized forward transform of a real row-major buffer.
    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        assert_eq!(data.len(), self.len(), "lattice size mismatch");
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, self.row_fwd.as_ref(), self.col_fwd.as_ref());
        buf
    }

    /// In-place `1/P`-scaled inverse transform.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len(), "lattice size mismatch");
        self.transform(buf, self.row_inv.as_ref(), self.col_inv.as_ref());
        let scale = 1.0 / self.len() as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }

    /// Inverse transform keeping the real part; also returns the largest
    /// discarded imaginary magnitude.
    pub fn inverse_real_with_residue(&self, spectrum: &[Complex64]) -> (Vec<f64>, f64) {
        let mut buf = spectrum.to_vec();
        self.inverse_in_place(&mut buf);
        let residue = buf.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
        (buf.into_iter().map(|z| z.re).collect(), residue)
    }

    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        self.inverse_real_with_residue(spectrum).0
    }

    pub fn forward(&self, plane: &ImagePlane) -> SpectrumPlane {
        assert_eq!(plane.dims(), self.dims(), "lattice size mismatch");
        SpectrumPlane {
            height: self.height,
            width: self.width,
            data: self.forward_real(plane.as_slice()),
        }
    }

    pub fn inverse(&self, spectrum: &SpectrumPlane) -> ImagePlane {
        assert_eq!(spectrum.dims(), self.dims(), "lattice size mismatch");
        ImagePlane {
            height: self.height,
            width: self.width,
            data: self.inverse_real(spectrum.as_slice()),
        }
    }

    /// Forward transforms of several planes, computed in parallel.
    pub fn forward_many(&self, planes: &[ImagePlane]) -> SpectrumSet {
        planes.par_iter().map(|p| self.forward(p)).collect()
    }

    pub fn inverse_many(&self, spectra: &[SpectrumPlane]) -> Vec<ImagePlane> {
        spectra.par_iter().map(|s| self.inverse(s)).collect()
    }
}

pub fn forward_dft(plane: &ImagePlane) -> SpectrumPlane {
    Fft2d::new(plane.height, plane.width).forward(plane)
}

/// Inverse DFT, real part.
pub fn inverse_dft(spectrum: &SpectrumPlane) -> ImagePlane {
    Fft2d::new(spectrum.height, spectrum.width).inverse(spectrum)
}

/// `a * b` with periodic boundary conditions.
pub fn circular_convolve(a: &ImagePlane, b: &ImagePlane) -> Result<ImagePlane> {
    a.check_same_dims(b)?;
    let fft = Fft2d::new(a.height, a.width);
    let mut prod = fft.forward_real(a.as_slice());
    let fb = fft.forward_real(b.as_slice());
    for (x, y) in prod.iter_mut().zip(&fb) {
        *x *= y;
    }
    Ok(ImagePlane {
        height: a.height,
        width: a.width,
        data: fft.inverse_real(&prod),
    })
}

/// Periodic cross-correlation `c(t) = sum_p a(p) b(p + t)`, the adjoint of
/// convolution with `a`.
pub fn circular_correlate(a: &ImagePlane, b: &ImagePlane) -> Result<ImagePlane> {
    a.check_same_dims(b)?;
    let fft = Fft2d::new(a.height, a.width);
    let mut prod = fft.forward_real(a.as_slice());
    let fb = fft.forward_real(b.as_slice());
    for (x, y) in prod.iter_mut().zip(&fb) {
        *x = x.conj() * y;
    }
    Ok(ImagePlane {
        height: a.height,
        width: a.width,
        data: fft.inverse_real(&prod),
    })
}

/// Places the support at the top-left corner of a zero `H x W` plane.
pub fn pad_filter(filter: &FilterSupport, height: usize, width: usize) -> Result<ImagePlane> {
    let m = filter.side;
    if m > height.min(width) {
        return Err(Error::SupportTooLarge {
            side: m,
            height,
            width,
        });
    }
    let mut plane = ImagePlane::zeros(height, width);
    for r in 0..m {
        plane.data[r * width..r * width + m].copy_from_slice(&filter.data[r * m..(r + 1) * m]);
    }
    Ok(plane)
}

/// Reads back the top-left `m x m` block.
pub fn crop_filter(plane: &ImagePlane, side: usize) -> Result<FilterSupport> {
    if side == 0 || side > plane.height.min(plane.width) {
        return Err(Error::SupportTooLarge {
            side,
            height: plane.height,
            width: plane.width,
        });
    }
    let mut data = Vec::with_capacity(side * side);
    for r in 0..side {
        data.extend_from_slice(&plane.data[r * plane.width..r * plane.width + side]);
    }
    Ok(FilterSupport { side, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImagePlane {
        ImagePlane::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive_dft(x: &ImagePlane) -> Vec<Complex64> {
        let (h, w) = x.dims();
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let phase = -2.0 * PI * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                        acc += Complex64::from_polar(x.get(r, c), phase);
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    fn naive_convolve(a: &ImagePlane, b: &ImagePlane) -> ImagePlane {
        let (h, w) = a.dims();
        ImagePlane::from_fn(h, w, |r, c| {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += a.get(i, j) * b.get((r + h - i) % h, (c + w - j) % w);
                }
            }
            acc
        })
    }

    fn naive_correlate(a: &ImagePlane, b: &ImagePlane) -> ImagePlane {
        let (h, w) = a.dims();
        ImagePlane::from_fn(h, w, |r, c| {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += a.get(i, j) * b.get((i + r) % h, (j + c) % w);
                }
            }
            acc
        })
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let spec = forward_dft(&ImagePlane::delta(4, 4, 0, 0));
        for z in spec.as_slice() {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_plane_concentrates_at_dc() {
        let plane = ImagePlane::from_fn(5, 3, |_, _| 0.7);
        let spec = forward_dft(&plane);
        assert!((spec.get(0, 0) - Complex64::new(0.7 * 15.0, 0.0)).norm() < 1e-12);
        for (i, z) in spec.as_slice().iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-12, "bin {i} = {z}");
        }
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w) in [(8, 8), (5, 7), (1, 6), (6, 1)] {
            let x = random_plane(&mut rng, h, w);
            let fast = forward_dft(&x);
            let slow = naive_dft(&x);
            for (a, b) in fast.as_slice().iter().zip(&slow) {
                assert!((a - b).norm() < 1e-10);
            }
            assert!(fast.conjugate_symmetry_error() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let h = 1 + trial % 9;
            let w = 1 + (trial * 7) % 11;
            let x = random_plane(&mut rng, h, w);
            let spec = forward_dft(&x);
            let parseval = spec.norm_sq() / (h * w) as f64;
            assert!((parseval - x.norm_sq()).abs() <= 1e-10 * x.norm_sq().max(1e-300));
            let back = inverse_dft(&spec);
            let err: f64 = back
                .as_slice()
                .iter()
                .zip(x.as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err <= 1e-12 * x.norm().max(1e-300));
        }
    }

    #[test]
    fn convolution_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_plane(&mut rng, 6, 5);
        let id = circular_convolve(&a, &ImagePlane::delta(6, 5, 0, 0)).unwrap();
        for (x, y) in id.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
        let shifted = circular_convolve(&a, &ImagePlane::delta(6, 5, 1, 0)).unwrap();
        for r in 0..6 {
            for c in 0..5 {
                assert!((shifted.get((r + 1) % 6, c) - a.get(r, c)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn convolution_theorem_against_spatial_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..100 {
            let h = 1 + trial % 8;
            let w = 1 + (trial / 8) % 8;
            let a = random_plane(&mut rng, h, w);
            let b = random_plane(&mut rng, h, w);
            let fast = circular_convolve(&a, &b).unwrap();
            let slow = naive_convolve(&a, &b);
            for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
                assert!((x - y).abs() <= 1e-10);
            }
            let comm = circular_convolve(&b, &a).unwrap();
            for (x, y) in fast.as_slice().iter().zip(comm.as_slice()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn correlation_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_plane(&mut rng, 6, 6);
        let b = random_plane(&mut rng, 6, 6);
        let id = circular_correlate(&ImagePlane::delta(6, 6, 0, 0), &b).unwrap();
        for (x, y) in id.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
        let auto = circular_correlate(&a, &a).unwrap();
        assert!((auto.get(0, 0) - a.norm_sq()).abs() < 1e-12);
        let fast = circular_correlate(&a, &b).unwrap();
        let slow = naive_correlate(&a, &b);
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = ImagePlane::zeros(4, 4);
        let b = ImagePlane::zeros(4, 5);
        assert!(matches!(
            circular_convolve(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(circular_correlate(&a, &b).is_err());
    }

    #[test]
    fn pad_and_crop() {
        let f = FilterSupport::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = pad_filter(&f, 4, 4).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expect = if r < 2 && c < 2 { f.get(r, c) } else { 0.0 };
                assert_eq!(p.get(r, c), expect);
            }
        }
        assert_eq!(crop_filter(&p, 2).unwrap(), f);
        let zero = pad_filter(&FilterSupport::zeros(3), 5, 5).unwrap();
        assert!(forward_dft(&zero).as_slice().iter().all(|z| z.norm() == 0.0));
        assert!(matches!(
            pad_filter(&FilterSupport::zeros(5), 4, 8),
            Err(Error::SupportTooLarge { .. })
        ));
    }

    #[test]
    fn plane_rejects_non_finite() {
        assert!(matches!(
            ImagePlane::new(1, 2, vec![0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn batched_transforms_match_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let planes: Vec<_> = (0..6).map(|_| random_plane(&mut rng, 8, 6)).collect();
        let fft = Fft2d::new(8, 6);
        let many = fft.forward_many(&planes);
        for (p, s) in planes.iter().zip(&many) {
            assert_eq!(&fft.forward(p), s);
        }
    }
}
