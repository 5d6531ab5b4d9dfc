//! Synthetic corpora from a planted dictionary: sparse random maps convolved
//! with known filters plus white Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::csc::{reconstruct, CoefficientMaps};
use crate::dict::{init_dictionary, FilterBank};
use crate::error::{Error, Result};
use crate::spectral::ImagePlane;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantedConfig {
    pub k: usize,
    pub filter_size: usize,
    pub height: usize,
    pub width: usize,
    /// Probability that a map entry is active.
    pub density: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            k: 16,
            filter_size: 8,
            height: 64,
            width: 64,
            density: 0.005,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

/// A planted bank and a generator of images drawn from it.
#[derive(Clone, Debug)]
pub struct PlantedCorpus {
    config: PlantedConfig,
    bank: FilterBank,
    rng: ChaCha8Rng,
}

impl PlantedCorpus {
    pub fn new(config: PlantedConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.density) || config.noise_sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "density {} or noise {} out of range",
                config.density, config.noise_sigma
            )));
        }
        // the bank and the sample stream use unrelated seeds
        let bank = init_dictionary(config.k, config.filter_size, config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(2);
        Ok(Self { config, bank, rng })
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    /// Next image together with its ground-truth maps. Active entries are
    /// standard normal.
    pub fn sample(&mut self) -> Result<(ImagePlane, CoefficientMaps)> {
        let c = self.config;
        let rng = &mut self.rng;
        let maps = (0..c.k)
            .map(|_| {
                ImagePlane::from_fn(c.height, c.width, |_, _| {
                    if rng.random::<f64>() < c.density {
                        rng.sample(StandardNormal)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        let maps = CoefficientMaps::new(maps)?;
        let clean = reconstruct(&self.bank, &maps)?;
        let rng = &mut self.rng;
        let noisy = ImagePlane::new(
            c.height,
            c.width,
            clean
                .as_slice()
                .iter()
                .map(|v| v + c.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )?;
        Ok((noisy, maps))
    }

    pub fn images(&mut self, n: usize) -> Result<Vec<ImagePlane>> {
        (0..n).map(|_| self.sample().map(|(s, _)| s)).collect()
    }
}
