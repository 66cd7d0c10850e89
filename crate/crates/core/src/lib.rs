//! A virtual doctor for type 2 diabetes risk.
//!
//! Simulated cabin sensors measure weight and height, a small feed-forward
//! network trained on a synthetic cohort scores the patient, the score is
//! calibrated into a probability, and an interview state machine adjusts it
//! with symptom answers before routing the patient through a twilight-zone
//! rule. The evaluation module carries the statistics used to judge models
//! (ROC/AUC, DeLong, t-tests, permutation tests, capacity sweeps), and the
//! service module exposes sessions over HTTP.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anamnesis;
pub mod artifact;
pub mod calibration;
pub mod commands;
pub mod dataset;
pub mod evaluation;
pub mod neuralnet;
pub mod pipeline;
pub mod rng;
pub mod sensors;
pub mod service;
