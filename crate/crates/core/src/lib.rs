//! Infinity-harmonic potentials and first infinity-eigenfunction checks on
//! planar domains.
//!
//! The pipeline is geometry → grid → solver → eigen: build a [`Domain`],
//! discretize it with [`grid::build_grid`], solve for the potential with
//! [`solver::potential`], and test a candidate field against the eigenvalue
//! equation with [`eigen::eigen_verdict`].

pub mod eigen;
pub mod experiment;
pub mod geometry;
pub mod grid;
pub mod output;
pub mod solver;

pub use eigen::{eigen_verdict, EigenReport, Tolerances, Verdict};
pub use geometry::{Domain, DomainSpec, Point2, RidgeSet};
pub use grid::{build_grid, Field, Grid, NodeClass, StencilSet};
pub use solver::{potential, BVProblem, SolveReport};
