//! Few-shot sound classification for a tangible, mat-driven device.
//!
//! The pipeline is: one-second [`audio::AudioClip`]s are summarized by a
//! [`features::FeatureExtractor`], labeled by the [`mat`] zone the device
//! sits in, and used to train a [`forest::ForestModel`]. A
//! [`session::Session`] drives the record/train/infer loop; the
//! [`protocol`] module defines the device/server wire format and
//! [`device`] simulates the device itself.

pub mod action;
pub mod audio;
pub mod device;
pub mod features;
pub mod forest;
pub mod hub;
pub mod mat;
pub mod protocol;
pub mod rng;
pub mod session;
pub mod wav;

pub use action::{ActionLabel, NUM_ACTIONS};
pub use audio::{validate_clip, AudioClip};
pub use features::{extract_features, FeatureConfig, FeatureExtractor, FeatureVector, LogMelExtractor};
pub use forest::{train_forest, ClassProbabilities, ForestConfig, ForestModel, LabeledSample};
pub use mat::{DevicePose, MatLayout};
pub use session::{Mode, Session, SessionError};
