//! Spectral pairs for affine iterated function systems.
//!
//! The crate is organised bottom-up: exact lattice arithmetic ([`lattice`]),
//! the contractive systems themselves ([`ifs`]), Hadamard triples
//! ([`hadamard`]), Fourier transforms and Parseval certification
//! ([`fourier`]), W_B-cycles ([`cycles`]), path measures ([`paths`]) and
//! invariant subspace translates ([`subspace`]).
//!
//! Exact quantities use [`Rational`]; floating-point evaluation is generic
//! over [`scalar::Real`] with `f64` as the default.

pub mod cycles;
pub mod error;
pub mod fourier;
pub mod hadamard;
pub mod ifs;
pub mod lattice;
pub mod matrix;
pub mod paths;
pub mod scalar;
pub mod subspace;

pub use num_complex::Complex64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use matrix::Matrix;

pub type Rational = num_rational::BigRational;
pub type IntMatrix = Matrix<i64>;
pub type RatMatrix = Matrix<Rational>;
pub type RealMatrix = Matrix<f64>;
pub type IntVec = Vec<i64>;
pub type RatVec = Vec<Rational>;

pub use cycles::{cycle_point, cycle_spectrum, enumerate_wb_cycles, Cycle};
pub use fourier::{parseval_certify, MeasureTransform, SpectrumApprox};
pub use hadamard::{hadamard_matrix, is_hadamard_triple, HadamardTriple, Triple};
pub use ifs::{AffineIfs, AttractorCloud, BoundingBox};
pub use paths::{estimate_hf, simulate_paths, InvariantSetSpec, PathConfig, PathEnsemble};
pub use subspace::{check_invariant_translate, decompose, subspace_spectrum, trace_escape, BlockDecomposition};
pub use lattice::{dual_lattice, is_expanding, DigitRole, DigitSet, ExpandingMatrix, LatticeBasis, UnimodularMatrix};
