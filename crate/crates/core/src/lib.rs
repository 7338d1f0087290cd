pub mod acoustic;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod label;
pub mod lexical;
pub mod model;
pub mod numeric;
pub mod tokenizer;

pub use error::{Error, Result};
pub use label::PunctuationLabel;
