pub mod dct;
pub mod error;
pub mod format;
pub mod harness;
pub mod logo;
pub mod logos_dct;
pub mod metrics;
pub mod oracle;
pub mod rl;
pub mod rng;
pub mod style_search;
pub mod stylize;
pub mod video;

pub use error::{LsfError, Result};
