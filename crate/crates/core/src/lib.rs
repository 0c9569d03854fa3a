//! Gradually grown stacked-LSTM language models with layer-wise gradient
//! clipping, training diagnostics and an exact information-theory workbench.

pub mod clip;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod glsched;
pub mod infolab;
pub mod net;

pub use error::{Error, Result};
