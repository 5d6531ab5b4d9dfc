//! Convolutional sparse coding and two approximate online convolutional
//! dictionary learning algorithms whose persistent state is `O(K P)`.

pub mod admm;
pub mod alg1;
pub mod alg2;
pub mod csc;
pub mod dict;
pub mod error;
pub mod history;
pub mod ingest;
pub mod persist;
pub mod rank_one;
pub mod spectral;
pub mod state;
pub mod synth;
pub mod train;

pub use alg1::{dict_step_alg1, DictStep};
pub use alg2::{c_update_alg2, d_update_alg2, dict_step_alg2, history_update_alg2, Alg2Step};
pub use admm::{AdmmSettings, AdmmStatus, VaryPenalty};
pub use csc::{csc_objective, csc_solve, lambda_max, soft_threshold, CoefficientMaps};
pub use dict::{evaluate, init_dictionary, project_filter, EvalReport, FilterBank};
pub use error::{Error, Result};
pub use history::HistoryPair;
pub use spectral::{Complex64, Fft2d, FilterSupport, ImagePlane, SpectrumPlane, SpectrumSet};
pub use state::{Alg1State, Alg2State, OnlineState};
pub use ingest::{center_crop_resize, load_grayscale, tikhonov_highpass, DatasetSource, PreprocessOptions, PreprocessReport};
pub use persist::{append_metrics, export_dictionary_tiles, load_checkpoint, save_checkpoint, Checkpoint, MetricsRow};
pub use train::{train_alg1, train_alg2, Algorithm, LambdaRule, TrainOptions, Trainer};
