//! Grammar-based fairness testing for black-box NLP models.
//!
//! The pipeline: an annotated context-free grammar generates discriminatory
//! test cases (sentences identical up to a sensitive token), a metamorphic
//! oracle compares the model's outputs across each case, count maps track
//! which grammar tokens appear in violating cases, MAD-based diagnosis
//! isolates anomalous tokens, a directed generation phase concentrates on
//! them, and a labeled augmentation dataset is emitted for retraining.

pub mod augmentation;
pub mod campaign;
pub mod diagnosis;
pub mod generator;
pub mod grammar;
pub mod group_fairness;
pub mod mut_adapters;
pub mod oracles;
pub mod report;
pub mod rng;
