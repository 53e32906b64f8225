pub mod cli;
pub mod datastore;
pub mod dynamics;
pub mod encoding;
pub mod error;
pub mod idim;
pub mod lens;
mod linalg;
pub mod probing;
pub mod ridge;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
