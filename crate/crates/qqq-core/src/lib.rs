//! Two spin qubits coupled through a driven qutrit coupler.

pub mod analysis;
pub mod circuit_model;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod protocols;
pub mod units;

pub use analysis::{FidelityReport, SweepResult};
pub use circuit_model::{derive, derive_spin_model, CircuitParams, Derivation, SpinModelParams};
pub use dynamics::{
    propagate, CarrierMode, CollapseSet, Envelope, Evolution, IntegratorOptions, Pulse,
    QuantumState, Reference, Shape, StaticFrame, Trajectory,
};
pub use error::{Error, Result};
pub use hilbert::{BasisLabel, Channel, DensityMatrix, Operator, Spin, StateVector, C64, DIM};
pub use protocols::{run_protocol, ProtocolConfig, ProtocolKind, ProtocolOutcome, Schedule};
