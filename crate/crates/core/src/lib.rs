pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
pub mod prox;
pub mod searchspace;
pub mod objective;
pub mod tasks;
pub mod search;
pub mod harness;
