pub mod env;
pub mod error;
pub mod eval;
pub mod grounding;
pub mod io;
pub mod lexicon;
pub mod perturb;
pub mod remedy;
pub mod rng;
pub mod speaker;
pub mod suite;

pub use error::{Error, Result};
