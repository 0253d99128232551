//! Deterministic simulator for differentially private federated learning
//! with a self-tuning gradient clipping norm.
//!
//! The pieces, bottom up: counter-based random streams ([`rng`]), parameter
//! vectors and models ([`tensor`], [`model`]), the clip-sum-noise update
//! ([`mechanism`]), the clip-norm controller ([`clipnorm`]), a Renyi
//! accountant ([`accountant`]), dataset loading and partitioning ([`data`]),
//! the federated round loop ([`federation`]), and the config-driven
//! experiment harness ([`harness`]).
//!
//! Every run is a pure function of (config, seed): reruns and different
//! worker counts reproduce output files byte for byte.

pub mod accountant;
pub mod clipnorm;
pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod mechanism;
pub mod model;
pub mod rng;
pub mod tensor;

pub use accountant::{calibrate_sigma, epsilon_from_rdp, rdp_gaussian, rdp_subsampled_gaussian, PrivacyLedger};
pub use clipnorm::{ClipGradVariant, ClippingState, CLIP_FLOOR};
pub use config::ExperimentConfig;
pub use data::{partition, read_idx_dataset, synth_blobs, train_test_split, Dataset, PartitionSpec};
pub use error::{Error, Result};
pub use federation::{ClipCadence, FederationConfig, LrSchedule, Simulation, TrainingMode};
pub use harness::{compare_experiments, plotdata, run_experiment};
pub use mechanism::{clip_gradient, dp_sgd_step, noisy_mean, NoiseConfig};
pub use model::{ModelKind, ModelSpec};
pub use tensor::{Example, ParamVector};
