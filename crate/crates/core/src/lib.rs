//! Numerical engine for causal phase-space quantum mechanics on 1- and
//! 2-dimensional configuration spaces.
//!
//! The crate builds, for a wavefunction evolving under the Schrödinger
//! equation, the positive phase-space density concentrated on a momentum map
//! `p̂(x, t)` chosen so that the density reproduces the quantum probability
//! densities of a chain of n+1 complete commuting sets (positions, momenta
//! and the mixed sets in between) as marginals. From the map it derives the
//! system-point velocity field (de Broglie-Bohm velocity plus an
//! antisymmetric-tensor correction required for a causal Hamiltonian to
//! exist), constructs the causal Hamiltonian itself, and propagates
//! trajectory ensembles for comparison against de Broglie-Bohm flow.
//!
//! Module layout follows the processing pipeline:
//!
//! * [`grid`] / [`spectral`] — tensor-product grids, continuum-normalized
//!   Fourier transforms and derivative operators.
//! * [`wavepacket`] — wavefunction states, split-step evolution, mixed
//!   position/momentum representations, polar decomposition.
//! * [`marginal_chain`] — CCS chains, conditional CDF tables, monotone
//!   matching, momentum maps and their statistical verification.
//! * [`velocity_solver`] — probability currents, dBB velocities, structure
//!   tensors, the antisymmetric W field and the assembled velocity field.
//! * [`causal_hamiltonian`] — vector/scalar potentials and the
//!   phase-space Hamiltonian, plus the dBB reference Hamiltonian.
//! * [`trajectories`] — ensemble propagation and equivariance diagnostics.
//! * [`pipeline`] / [`verify`] — orchestration and the acceptance battery.

pub mod causal_hamiltonian;
mod error;
pub mod grid;
pub mod marginal_chain;
pub mod pipeline;
pub mod rng;
pub mod spectral;
pub mod trajectories;
pub mod velocity_solver;
pub mod verify;
pub mod wavepacket;

pub use error::{CoreError, Result};
pub use grid::{AxisSpec, GridSpec};
pub use wavepacket::{
    AxisRep, GaussianTerm, MixedState, PolarFields, PotentialKind, PotentialSpec,
    WavefunctionSpec, WavefunctionState,
};
