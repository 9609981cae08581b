//! Sampling, belief diffusion, characterization and detection of hateful
//! users on a directed retweet graph.

pub mod crawler;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod models;
pub mod profile;
pub mod provenance;
pub mod stats;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use graph::{GraphBuilder, RetweetGraph};
pub use profile::{Label, LabelSet, ProfileStore, Tweet, UserProfile};
