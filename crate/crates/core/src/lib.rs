//! Dual-branch lossy codec library.
//!
//! Explicit semantics (a scalar-quantized compact latent plus fixed-length
//! tag codes) condition an analytic diffusion prior; the remaining texture
//! travels as reverse-channel-coded noisy diffusion states selected by the
//! Poisson functional representation. Everything is deterministic given a
//! seed, and every rate quantity is accounted for down to the bit.

pub mod bench;
pub mod bitstream;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod explicit;
pub mod gaussian;
pub mod grid;
pub mod pipeline;
pub mod range_coder;
pub mod rcc;
pub mod sampler;
pub mod tiling;
pub mod tradeoff;

pub use error::{Error, Result};
pub use gaussian::{kl_bits, log_density_ratio, DiagonalGaussian};
pub use grid::Grid;
pub use sampler::{simulate, DeterministicSampler, SamplerKey};
