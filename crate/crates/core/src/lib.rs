//! Numerical laboratory for the underdamped Langevin process
//! `dq = p dt`, `dp = (F(q) - gamma p) dt + sigma dB` absorbed at the
//! boundary of the position cylinder `D = O x R^d`.
//!
//! The crate is organised around the exact Gaussian transition kernel of the
//! force-free process ([`kernel`]), which powers an explicit series upper
//! bound on the transition density with force ([`bound`]), an exact splitting
//! integrator with absorption at `∂D` ([`sde`]), Feynman-Kac Monte Carlo
//! solvers and density estimators for the kinetic Fokker-Planck
//! initial-boundary value problem ([`fk`]), the constructive Harnack chain
//! machinery ([`harnack`]) and a deterministic d=1 phase-space grid solver
//! that serves as an independent cross-check ([`grid`]).
//!
//! All Monte Carlo drivers draw from counter-based RNG substreams
//! ([`rng`]), so results are bit-reproducible for a fixed seed regardless of
//! the worker count.

pub mod bound;
pub mod checks;
pub mod error;
pub mod fk;
pub mod force;
pub mod geometry;
pub mod grid;
pub mod harnack;
pub mod kernel;
pub mod numeric;
pub mod phase;
pub mod rng;
pub mod sde;

pub use error::{KfpError, Result};
pub use phase::PhaseVector;
