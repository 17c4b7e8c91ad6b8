//! Multi-dimensional statistical dialogue management for a restaurant
//! information domain.
//!
//! The system side keeps a belief and grounding state, and either one MDP
//! agent or three per-dimension agents (task, auto-feedback, social) choose
//! summary actions that are combined into a single system act. An
//! agenda-based simulated user with a speech-understanding error model
//! provides training and evaluation dialogues.

pub mod acts;
pub mod error;
pub mod errormodel;
pub mod harness;
pub mod manager;
pub mod ontology;
pub mod policy;
pub mod state;
pub mod usersim;

pub use error::{Error, Result};
