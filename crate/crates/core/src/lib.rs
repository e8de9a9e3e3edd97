//! Cross-centre transfer-learning benchmark for fetal ultrasound plane
//! classification.
//!
//! The library is organised around the experiment pipeline:
//!
//! * [`corpus`] — dataset manifests, patient-level splits, class-quota
//!   sampling and cross-centre backfill of missing classes.
//! * [`preprocess`] — crop / grayscale / resize / min-max chain producing
//!   fixed 224x224 inputs.
//! * [`augment`] — training-time flip / crop / translate / rotate.
//! * [`model`] — dense-block classifier family with named parameter groups
//!   and the last-k-layers freezing contract used by transfer learning.
//! * [`training`] — Adam loop, checkpoint selection, evaluation.
//! * [`metrics`] — one-vs-rest AUC, confusion matrices, precision/recall.
//! * [`synth`] — synthetic multi-centre generator with controllable
//!   domain shift, standing in for private clinical data.
//! * [`strategies`] — single-centre, combination and transfer-learning
//!   experiment arms plus the resumable sweep runner.
//! * [`config`] — the experiment configuration file.

pub mod augment;
pub mod config;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod raster;
pub mod seed;
pub mod strategies;
pub mod synth;
pub mod training;

pub use raster::Raster;
