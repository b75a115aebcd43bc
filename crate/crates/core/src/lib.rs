pub mod cli;
pub mod error;
pub mod fit;
pub mod geodata;
pub mod hmm;
pub mod io;
pub mod numcore;
pub mod predict;
pub mod rsf;
pub mod ssf;
pub mod track;

pub use error::{Error, Result};
