//! The network: per-view extractors, masked cross-view attention encoder,
//! weighted fusion and the mirrored decoder with per-view output heads.

mod config;
mod forward;
mod state;

pub use config::ModelConfig;
pub use forward::{decode, encode, extract_low_level, forward, fuse, ForwardOutput, Inference, Stage};
pub use state::{ModelState, NamedTensor};

#[cfg(test)]
mod tests;
