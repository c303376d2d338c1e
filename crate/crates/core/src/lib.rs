//! Exact classical simulation of stochastic quantum spiking neural networks.
//!
//! The crate is organized around a small dense linear-algebra kernel for
//! few-qubit registers ([`qcore`]), three spiking neuron models built on top
//! of it ([`neurons`]), a directed-graph network runtime ([`network`]),
//! dataset ingestion and rate encoding ([`encoding`]), and two trainers plus
//! an exhaustive-enumeration oracle ([`learning`]).
//!
//! All numeric kernels are generic over the real scalar type through
//! [`scalar::Scalar`]; the rest of the crate works with the concrete
//! aliases below ([`Real`], [`Cplx`], ...).

pub mod encoding;
pub mod error;
pub mod learning;
pub mod network;
pub mod neurons;
pub mod qcore;
pub mod rng;
pub mod scalar;

pub use error::CoreError;
pub use scalar::Scalar;

/// Concrete real scalar used by the network, learning, and I/O layers.
pub type Real = f64;
/// Complex amplitude over [`Real`].
pub type Cplx = num_complex::Complex<Real>;
/// Density matrix over [`Real`].
pub type DensityMatrix = qcore::DensityMatrix<Real>;
/// Unitary over [`Real`].
pub type Unitary = qcore::Unitary<Real>;
/// Born probability table over [`Real`].
pub type ProbTable = qcore::ProbTable<Real>;
