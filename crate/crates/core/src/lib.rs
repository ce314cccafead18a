//! Core library for CWS vs. CWNS physiological arousal classification.
//!
//! The pipeline runs raw ECG/EDA/RSP recordings through drift removal and
//! window/segment extraction ([`signal`]), per-segment feature extraction
//! ([`features`]), weakly supervised multiple-instance classifiers built on a
//! small autodiff kernel ([`nn`], [`models`]), KernelSHAP interpretation
//! ([`explain`]), person-disjoint evaluation ([`eval`]), and a synthetic data
//! generator with planted instance-level ground truth ([`synth`]) that serves
//! as the verification oracle.

pub mod error;
pub mod eval;
pub mod explain;
pub mod features;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
