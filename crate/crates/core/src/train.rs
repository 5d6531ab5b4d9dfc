//! Sample-by-sample drivers for both online algorithms.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::admm::AdmmSettings;
use crate::alg1::{commit_alpha, dict_step_alg1};
use crate::alg2::dict_step_alg2;
use crate::csc::{csc_objective, csc_solve, lambda_max, CoefficientMaps};
use crate::dict::{init_dictionary, random_unit_filter, FilterBank};
use crate::error::{Error, Result};
use crate::history::HistoryPair;
use crate::persist::{Checkpoint, MetricsRow};
use crate::spectral::{Fft2d, ImagePlane};
use crate::state::OnlineState;

/// Samples a filter must stay identically zero before it is re-randomized.
pub const DEAD_FILTER_PATIENCE: u32 = 5;

/// RNG stream used for dead-filter rescue, kept apart from initialization.
const RESCUE_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    /// Joint `c`/`d` ADMM with `1/N` history.
    Alg1,
    /// Exact latest-sample fit, then a single-sample refit of `c`.
    Alg2,
}

impl Algorithm {
    pub fn id(self) -> u8 {
        match self {
            Algorithm::Alg1 => 1,
            Algorithm::Alg2 => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Algorithm::Alg1),
            2 => Ok(Algorithm::Alg2),
            other => Err(Error::Format(format!("unknown algorithm id {other}"))),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" => Ok(Algorithm::Alg1),
            "alg2" => Ok(Algorithm::Alg2),
            other => Err(Error::Config(format!("unknown algorithm '{other}', expected alg1 or alg2"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
        })
    }
}

/// How the sparsity weight is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaRule {
    /// Fraction of `lambda_max` of the first sample under the initial
    /// dictionary, computed once.
    Fraction(f64),
    Absolute(f64),
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::Fraction(0.1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub algorithm: Algorithm,
    pub k: usize,
    pub filter_size: usize,
    pub lambda: LambdaRule,
    pub settings: AdmmSettings,
    pub seed: u64,
    pub rescue_dead_filters: bool,
}

impl TrainOptions {
    pub fn new(algorithm: Algorithm, k: usize) -> Self {
        Self {
            algorithm,
            k,
            filter_size: 8,
            lambda: LambdaRule::default(),
            settings: AdmmSettings::default(),
            seed: 0,
            rescue_dead_filters: false,
        }
    }
}

/// Online trainer holding only the persistent `O(K P)` state plus an RNG.
#[derive(Clone, Debug)]
pub struct Trainer {
    algorithm: Algorithm,
    state: OnlineState,
    seed: u64,
    rng: ChaCha8Rng,
    rescue: bool,
    zero_streak: Vec<u32>,
}

impl Trainer {
    /// Fresh trainer on the lattice of `first`, which also fixes `lambda`
    /// under [`LambdaRule::Fraction`].
    pub fn start(options: &TrainOptions, first: &ImagePlane) -> Result<Self> {
        options.settings.validate()?;
        let dict = init_dictionary(options.k, options.filter_size, options.seed)?;
        let (h, w) = first.dims();
        if options.filter_size > h.min(w) {
            return Err(Error::SupportTooLarge {
                side: options.filter_size,
                height: h,
                width: w,
            });
        }
        let lambda = match options.lambda {
            LambdaRule::Absolute(v) => v,
            LambdaRule::Fraction(f) => f * lambda_max(first, &dict)?,
        };
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda} (is the first image constant?)"
            )));
        }
        let state = OnlineState::new(dict, h, w, lambda, options.settings);
        Ok(Self::assemble(options.algorithm, state, options.seed, 0, options.rescue_dead_filters))
    }

    /// Trainer continuing from a checkpoint; `settings` other than `rho0` come
    /// from the caller.
    pub fn resume(checkpoint: Checkpoint, settings: AdmmSettings, rescue_dead_filters: bool) -> Result<Self> {
        settings.validate()?;
        let settings = AdmmSettings {
            rho0: checkpoint.rho0,
            ..settings
        };
        let [seed, lo, hi, stream] = checkpoint.rng_state;
        if stream != RESCUE_STREAM {
            return Err(Error::Format(format!("unexpected rng stream {stream}")));
        }
        let word_pos = (u128::from(hi) << 64) | u128::from(lo);
        let state = OnlineState {
            dict: checkpoint.dict,
            history: checkpoint.history,
            lambda: checkpoint.lambda,
            settings,
        };
        Ok(Self::assemble(checkpoint.algorithm, state, seed, word_pos, rescue_dead_filters))
    }

    fn assemble(algorithm: Algorithm, state: OnlineState, seed: u64, word_pos: u128, rescue: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(RESCUE_STREAM);
        rng.set_word_pos(word_pos);
        let k = state.dict.len();
        Self {
            algorithm,
            state,
            seed,
            rng,
            rescue,
            zero_streak: vec![0; k],
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn dictionary(&self) -> &FilterBank {
        &self.state.dict
    }

    pub fn lambda(&self) -> f64 {
        self.state.lambda
    }

    pub fn settings(&self) -> &AdmmSettings {
        &self.state.settings
    }

    pub fn history(&self) -> &HistoryPair {
        &self.state.history
    }

    pub fn samples_seen(&self) -> u64 {
        self.state.history.sample_count
    }

    pub fn lattice(&self) -> (usize, usize) {
        self.state.history.dims()
    }

    pub fn state(&self) -> &OnlineState {
        &self.state
    }

    /// Codes `s` with the current dictionary and updates the dictionary.
    pub fn process(&mut self, s: &ImagePlane) -> Result<MetricsRow> {
        let started = Instant::now();
        if s.dims() != self.lattice() {
            return Err(Error::dims(self.lattice(), s.dims()));
        }
        let (maps, csc_status) = csc_solve(s, &self.state.dict, self.state.lambda, &self.state.settings)?;
        let objective = csc_objective(s, &self.state.dict, &maps, self.state.lambda)?;
        let (dict_iterations, fit) = match self.algorithm {
            Algorithm::Alg1 => {
                let (h, w) = s.dims();
                commit_alpha(&mut self.state.history, &maps.spectra(&Fft2d::new(h, w)))?;
                let step = dict_step_alg1(&mut self.state, s, &maps)?;
                (step.status.iterations, step.fit_term)
            }
            Algorithm::Alg2 => {
                let step = dict_step_alg2(&mut self.state, s, &maps)?;
                (step.d_status.iterations, step.fit_term)
            }
        };
        if self.rescue {
            self.rescue_dead_filters();
        }
        Ok(MetricsRow {
            sample_index: self.state.history.sample_count,
            csc_iterations: csc_status.iterations as u64,
            dict_iterations: dict_iterations as u64,
            csc_objective: objective,
            approx_fit_term: fit,
            wall_time_seconds: started.elapsed().as_secs_f64(),
        })
    }

    fn rescue_dead_filters(&mut self) {
        let m = self.state.dict.side();
        for k in 0..self.state.dict.len() {
            if self.state.dict.filter(k).as_slice().iter().all(|v| *v == 0.0) {
                self.zero_streak[k] += 1;
            } else {
                self.zero_streak[k] = 0;
            }
            if self.zero_streak[k] >= DEAD_FILTER_PATIENCE {
                let fresh = random_unit_filter(&mut self.rng, m);
                self.state.dict.replace(k, fresh);
                self.zero_streak[k] = 0;
            }
        }
    }

    /// Codes `s` with the current dictionary without updating anything.
    pub fn code(&self, s: &ImagePlane) -> Result<(CoefficientMaps, f64)> {
        let (maps, _) = csc_solve(s, &self.state.dict, self.state.lambda, &self.state.settings)?;
        let obj = csc_objective(s, &self.state.dict, &maps, self.state.lambda)?;
        Ok((maps, obj))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let pos = self.rng.get_word_pos();
        Checkpoint {
            algorithm: self.algorithm,
            lambda: self.state.lambda,
            rho0: self.state.settings.rho0,
            dict: self.state.dict.clone(),
            history: self.state.history.clone(),
            rng_state: [self.seed, pos as u64, (pos >> 64) as u64, RESCUE_STREAM],
        }
    }
}

/// One pass of the joint algorithm over `images`.
pub fn train_alg1<I>(images: I, options: &TrainOptions) -> Result<(FilterBank, Vec<MetricsRow>)>
where
    I: IntoIterator<Item = Result<ImagePlane>>,
{
    train_with(images, &TrainOptions {
        algorithm: Algorithm::Alg1,
        ..options.clone()
    })
}

/// One pass of the exact-latest algorithm over `images`.
pub fn train_alg2<I>(images: I, options: &TrainOptions) -> Result<(FilterBank, Vec<MetricsRow>)>
where
    I: IntoIterator<Item = Result<ImagePlane>>,
{
    train_with(images, &TrainOptions {
        algorithm: Algorithm::Alg2,
        ..options.clone()
    })
}

fn train_with<I>(images: I, options: &TrainOptions) -> Result<(FilterBank, Vec<MetricsRow>)>
where
    I: IntoIterator<Item = Result<ImagePlane>>,
{
    let mut iter = images.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Config("training set is empty".into()))??;
    let mut trainer = Trainer::start(options, &first)?;
    let mut metrics = vec![trainer.process(&first)?];
    for s in iter {
        metrics.push(trainer.process(&s?)?);
    }
    Ok((trainer.state.dict, metrics))
}
