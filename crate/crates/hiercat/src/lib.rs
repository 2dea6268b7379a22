//! Desk-scale testbed for hierarchical category learning.
//!
//! The pipeline generates synthetic stimuli with a known two-level taxonomy,
//! trains small multi-head softmax classifiers under four supervision
//! regimes (subordinate only, basic only, and each pretrained level tuned
//! with the other through a joint loss), then probes the learned embeddings:
//! similarity structure, dendrograms and cluster purity, fit to gold
//! similarity ratings, and few-shot label generalization with its
//! basic-level bias.

pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod generalization;
pub mod network;
pub mod repr_analysis;
pub mod rng;
pub mod taxonomy;

pub use error::{Error, Result};
