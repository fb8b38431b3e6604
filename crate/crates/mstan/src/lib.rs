//! Risk prediction on irregularly sampled multivariate time series.
//!
//! The crate implements a multi-scale temporal alignment network: linear
//! step embedding, Gaussian-kernel alignment across irregular timestamps,
//! temporal convolutions at several scales fused with learned weights,
//! temperature-controlled attention pooling, and a sigmoid risk head —
//! trained end to end with hand-derived reverse-mode gradients.
//!
//! Supporting modules cover data ingestion and preprocessing, a synthetic
//! generator with planted multi-scale signals, binary classification
//! metrics, checkpointing, and the configuration surface of the `mstan`
//! command-line tool.

pub mod config;
pub mod checkpoint;
pub mod data;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;
