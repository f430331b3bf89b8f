//! Indirect low-thrust trajectory search in the circular restricted
//! three-body problem, posed as sampling from a density over initial
//! costates.

pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod propagator;
pub mod systems;
pub mod orbits;
pub mod kdtree;
pub mod screening;
pub mod mcmc;
pub mod rng;
pub mod diffusion;
pub mod dataset;
pub mod analysis;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
