//! Nonlinear port-Hamiltonian DAEs: Dirac structures in graph form,
//! Lagrangian storage relations, conversion between Dirac and Lagrange
//! algebraic constraints, and implicit-midpoint simulation.

// Float guards like `x == 0.0` read better than literal patterns, and `!(a <= b)`
// is used on purpose so that NaN fails the check.
#![allow(clippy::redundant_guards, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod expr;
pub mod fixtures;
pub mod geometry;
pub mod legendre;
pub mod numerics;
pub mod phsystem;
pub mod schema;
pub mod simulate;

pub use expr::{ExprError, ExprTree, MatrixExpr, MatrixField, ScalarField};
pub use fixtures::{load_fixture, Fixture, FixtureError, FIXTURE_NAMES};
pub use geometry::{
    lagrange_constraint_probe, lagrangian_membership, validate_dirac, validate_morse, DiracStructure, GeometryError,
    IndexSplit, SamplingConfig, StorageRelation, ValidationReport, DEFAULT_SEED,
};
pub use legendre::LegendreError;
pub use numerics::{NewtonConfig, NumericsError};
pub use phsystem::{
    build_optimal_control, dirac_to_lagrange, extract_constraints, lagrange_to_dirac, ConstraintClass,
    ConstraintReport, PHSystem, SystemError,
};
pub use schema::{SchemaError, StorageDescription, SystemDescription};
pub use simulate::{consistent_init, energy_balance, index_check, simulate, SimConfig, SimError, Trajectory};
