//! Ornstein-Zernike asymptotics for lattice random walks.
//!
//! `kernel` holds step distributions and their tilted transforms, `wulff` solves for the
//! mass, optimal tilts and the direction-dependent norm, `lattice` evaluates lattice
//! Green functions, `brownian` the continuum Green functions with drift, and
//! `crossover` compares the two.

pub mod error;
pub mod kernel;
pub mod numeric;
pub mod brownian;
pub mod wulff;
pub mod lattice;
pub mod crossover;

pub use error::{Error, Result};
pub use kernel::{make_named_kernel, Kernel, KernelName};
