//! The dictionary feasible set (`m x m` support, unit l2 ball), projection
//! onto it, random initialization and test-set evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::admm::AdmmSettings;
use crate::csc::{csc_objective, csc_solve};
use crate::error::{Error, Result};
use crate::spectral::{pad_filter, Fft2d, FilterSupport, ImagePlane, SpectrumSet};

/// Slack allowed on the unit-norm constraint when validating a bank.
pub const FEASIBILITY_SLACK: f64 = 1e-12;

/// `K` filters sharing an `m x m` support.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    side: usize,
    filters: Vec<FilterSupport>,
}

impl FilterBank {
    /// Validates shape, finiteness and the norm constraint.
    pub fn new(filters: Vec<FilterSupport>) -> Result<Self> {
        let side = match filters.first() {
            Some(f) => f.side(),
            None => return Err(Error::InvalidParameter("dictionary must be nonempty".into())),
        };
        for (k, f) in filters.iter().enumerate() {
            if f.side() != side {
                return Err(Error::DimensionMismatch {
                    expected: format!("{side}x{side} filters"),
                    got: format!("filter {k} is {0}x{0}", f.side()),
                });
            }
            if f.norm() > 1.0 + FEASIBILITY_SLACK {
                return Err(Error::InvalidParameter(format!(
                    "filter {k} has norm {} > 1",
                    f.norm()
                )));
            }
        }
        Ok(Self { side, filters })
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn filters(&self) -> &[FilterSupport] {
        &self.filters
    }

    pub fn filter(&self, k: usize) -> &FilterSupport {
        &self.filters[k]
    }

    pub fn is_feasible(&self) -> bool {
        self.filters
            .iter()
            .all(|f| f.norm() <= 1.0 + FEASIBILITY_SLACK && f.as_slice().iter().all(|v| v.is_finite()))
    }

    pub fn padded(&self, height: usize, width: usize) -> Result<Vec<ImagePlane>> {
        self.filters
            .iter()
            .map(|f| pad_filter(f, height, width))
            .collect()
    }

    /// Spectra of the zero-padded filters on the plan's lattice.
    pub fn spectra(&self, fft: &Fft2d) -> Result<SpectrumSet> {
        let (h, w) = fft.dims();
        Ok(fft.forward_many(&self.padded(h, w)?))
    }

    pub(crate) fn replace(&mut self, k: usize, filter: FilterSupport) {
        debug_assert_eq!(filter.side(), self.side);
        self.filters[k] = filter;
    }

    /// Bank assembled from filters already known to be feasible.
    pub(crate) fn from_projected(filters: Vec<FilterSupport>) -> Self {
        let side = filters[0].side();
        Self { side, filters }
    }
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean projection onto {support in the top-left `m x m` block,
/// `|d|_2 <= 1`}.
///
/// The output always has a computed norm of at most one, so projecting it
/// again returns it unchanged.
pub fn project_filter(candidate: &ImagePlane, side: usize) -> Result<FilterSupport> {
    let mut filter = crate::spectral::crop_filter(candidate, side)?;
    project_support_in_place(filter.as_mut_slice());
    Ok(filter)
}

pub(crate) fn project_support_in_place(values: &mut [f64]) {
    let n = l2(values);
    if n > 1.0 {
        for v in values.iter_mut() {
            *v /= n;
        }
        // rounding can leave the norm a few ulps above one
        while l2(values) > 1.0 {
            for v in values.iter_mut() {
                *v *= 1.0 - f64::EPSILON;
            }
        }
    }
}

/// Independent standard-normal `m x m` filters scaled to unit norm.
pub fn init_dictionary(k: usize, side: usize, seed: u64) -> Result<FilterBank> {
    if k == 0 || side == 0 {
        return Err(Error::InvalidParameter(
            "filter count and size must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filters = (0..k)
        .map(|_| random_unit_filter(&mut rng, side))
        .collect();
    Ok(FilterBank::from_projected(filters))
}

pub(crate) fn random_unit_filter(rng: &mut impl rand::Rng, side: usize) -> FilterSupport {
    loop {
        let mut data: Vec<f64> = (0..side * side)
            .map(|_| StandardNormal.sample(&mut *rng))
            .collect();
        let n = l2(&data);
        if n > 0.0 {
            for v in &mut data {
                *v /= n;
            }
            return FilterSupport::new(side, data).expect("finite normal draws");
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_image_objective: Vec<f64>,
    pub mean_objective: f64,
    pub lambda_used: f64,
}

/// Sparse-codes each image with `dict` and reports the coding objective.
pub fn evaluate<I>(images: I, dict: &FilterBank, lambda: f64, settings: &AdmmSettings) -> Result<EvalReport>
where
    I: IntoIterator<Item = Result<ImagePlane>>,
{
    let mut per_image_objective = Vec::new();
    for image in images {
        let s = image?;
        let (maps, _) = csc_solve(&s, dict, lambda, settings)?;
        per_image_objective.push(csc_objective(&s, dict, &maps, lambda)?);
    }
    if per_image_objective.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    let mean_objective = per_image_objective.iter().sum::<f64>() / per_image_objective.len() as f64;
    Ok(EvalReport {
        per_image_objective,
        mean_objective,
        lambda_used: lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_candidate_projects_to_zero() {
        let f = project_filter(&ImagePlane::zeros(6, 6), 3).unwrap();
        assert!(f.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn long_vector_rescaled_to_unit_norm() {
        let mut c = ImagePlane::zeros(5, 5);
        c.set(0, 0, 2.0);
        let f = project_filter(&c, 2).unwrap();
        assert_eq!(f.as_slice(), &[1.0, 0.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = ImagePlane::zeros(8, 8);
        for r in 0..3 {
            for col in 0..3 {
                c.set(r, col, rng.random_range(-1.0..1.0));
            }
        }
        let scale = 2.0 / c.norm();
        c.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        let f = project_filter(&c, 3).unwrap();
        assert!((f.norm() - 1.0).abs() < 1e-15);
        for r in 0..3 {
            for col in 0..3 {
                assert!((f.get(r, col) - c.get(r, col) / 2.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let c = ImagePlane::from_fn(7, 9, |_, _| rng.random_range(-3.0..3.0));
            let once = project_filter(&c, 4).unwrap();
            let twice = project_filter(&pad_filter(&once, 7, 9).unwrap(), 4).unwrap();
            assert_eq!(once, twice);
            assert!(once.norm() <= 1.0);
        }
    }

    #[test]
    fn projection_is_nearest_feasible_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (h, w, m) = (6, 6, 3);
        for _ in 0..200 {
            let scale = rng.random_range(0.1..3.0);
            let c = ImagePlane::from_fn(h, w, |_, _| scale * rng.random_range(-1.0..1.0));
            let p = pad_filter(&project_filter(&c, m).unwrap(), h, w).unwrap();
            let dist = |z: &ImagePlane| -> f64 {
                c.as_slice()
                    .iter()
                    .zip(z.as_slice())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            let best = dist(&p);
            for _ in 0..50 {
                let f = random_unit_filter(&mut rng, m);
                let r: f64 = rng.random_range(0.0..1.0);
                let data = f.as_slice().iter().map(|v| v * r).collect();
                let z = pad_filter(&FilterSupport::new(m, data).unwrap(), h, w).unwrap();
                assert!(best <= dist(&z) + 1e-12);
            }
        }
    }

    #[test]
    fn initialization_is_unit_norm_and_seeded() {
        let a = init_dictionary(6, 8, 42).unwrap();
        for f in a.filters() {
            assert!((f.norm() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(a, init_dictionary(6, 8, 42).unwrap());
        assert_ne!(a, init_dictionary(6, 8, 43).unwrap());
        assert!(init_dictionary(0, 8, 1).is_err());
    }

    #[test]
    fn bank_rejects_infeasible_filters() {
        let f = FilterSupport::new(2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(FilterBank::new(vec![f]).is_err());
        assert!(FilterBank::new(vec![]).is_err());
    }

    #[test]
    fn evaluation_aggregates() {
        let dict = init_dictionary(2, 3, 1).unwrap();
        let s = AdmmSettings::default();
        let zero = evaluate([Ok(ImagePlane::zeros(8, 8))], &dict, 0.1, &s).unwrap();
        assert_eq!(zero.mean_objective, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = ImagePlane::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let one = evaluate([Ok(img.clone())], &dict, 0.1, &s).unwrap();
        let two = evaluate([Ok(img.clone()), Ok(img)], &dict, 0.1, &s).unwrap();
        assert_eq!(two.per_image_objective.len(), 2);
        assert_eq!(two.mean_objective, one.mean_objective);
        assert!(evaluate(Vec::<Result<ImagePlane>>::new(), &dict, 0.1, &s).is_err());
    }
}
