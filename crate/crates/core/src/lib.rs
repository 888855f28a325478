//! Identification of polynomial vector fields from snapshot data through a
//! least-squares fit of the Koopman generator matrix.

pub mod basis;
pub mod dynamics;
pub mod edmd;
pub mod error;
pub mod experiments;
pub mod generator;
pub mod identify;
pub mod io;
pub mod linalg;
pub mod metrics;

pub use basis::{MonomialBasis, MultiIndex};
pub use dynamics::{builtin_system, BuiltinSystem, InputSignal, Simulation, SimulationProtocol, SYSTEM_NAMES};
pub use edmd::{PairOrigin, SnapshotDataset, SnapshotPair};
pub use error::{Error, Result, Stage};
pub use experiments::{run_benchmark, BenchmarkOptions, BenchmarkSummary, BENCHMARK_NAMES};
pub use identify::{identify, IdentificationConfig, IdentificationResult, PolynomialVectorField};
pub use linalg::RealMatrix;
pub use metrics::{coefficient_error, link_score, reconstruct_links, roc_sweep, CoefficientError, LinkScore, RocPoint};
