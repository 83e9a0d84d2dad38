//! Numerical laboratory for spherical mixed `p`-spin glasses: disorder tensors,
//! Hamiltonians, truncation, ground states, free energies and the
//! Crisanti–Sommers variational formula.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod disorder;
pub mod domain;
pub mod error;
pub mod experiments;
pub mod free_energy;
pub mod ground_state;
pub mod hamiltonian;
pub mod injective;
pub mod mixture;
pub mod parisi;
pub mod quadrature;
pub mod rng;
pub mod tensor;

pub use domain::{DomainSpec, SpeciesPartition, SpinConfiguration};
pub use error::{Error, Result};
pub use hamiltonian::{covariance_audit, gradient, hamiltonian, CovarianceAudit, Hamiltonian};
pub use mixture::{xi_eval, MixtureSpec};
pub use tensor::{multiplicity, SymmetricTensor};
