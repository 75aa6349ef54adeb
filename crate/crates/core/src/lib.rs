//! Training and evaluation engine for genomics-guided, domain-adversarial
//! attention-MIL subtype prediction on synthetic embedding bags.

mod binio;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcore;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod train;

pub use error::{Error, Result};
