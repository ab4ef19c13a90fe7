//! Cross-domain graph prompting with dual (semantic + structural) retrieval
//! stores and domain tokens.

pub mod adapt;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod harness;
pub mod io;
pub mod text;
pub mod pretrain;
pub mod store;
pub mod wse;

pub use error::{Error, Result};
