//! Desk-scale experiment scaffolding: synthetic data, the toy classifier,
//! training, truncation sweeps and gradient checks.

pub mod dataset;
pub mod gradcheck;
pub mod model;
pub mod rng;
pub mod train;

pub use gradcheck::{gradcheck, GradOp, GradcheckReport, TrialResult};
pub use dataset::{gen_dataset, generate, Dataset, DatasetConfig, Sample};
pub use model::{model_backward, model_forward, model_forward_subset, softmax_cross_entropy, Activation, ModelCache, ModelGrad, ToyModel};
pub use train::{accuracy, pooled_spectra, train, truncation_sweep, SubsetMode, TrainConfig, TrainOutcome, TrainReport};
