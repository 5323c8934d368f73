//! Explanation distributions for Bayesian 1-D CNN classifiers of power-quality
//! disturbances.
//!
//! The pipeline synthesises labelled waveforms ([`siggen`]), trains a small
//! convolutional classifier from scratch ([`net`]), approximates its parameter
//! posterior ([`posterior`]), pushes posterior draws through saliency
//! operators ([`attribution`]) into an empirical explanation distribution
//! that is summarised ([`explain`]), and scores localisation against the
//! known disturbance support ([`metrics`]).
//!
//! Per-instance results are stored as [`bundle`]s and drawn as SVG panels by
//! [`report`]; measured recordings enter through [`ingest`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod bundle;
pub mod error;
pub mod explain;
pub mod ingest;
pub mod metrics;
pub mod net;
pub mod posterior;
pub mod report;
pub mod rng;
pub mod siggen;

pub use error::{Error, Result};
