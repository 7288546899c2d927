//! Discrete check of the first eigenfunction equation
//!
//! ```text
//! max(Λ − |∇u|/u, Δ∞u) = 0
//! ```
//!
//! on grid fields that vanish on the boundary. The two terms are evaluated
//! node by node on the wide stencil: `a = Λ − |∇u|/u` with `|∇u|` the
//! steepest descent slope, and `b = D∞u` away from the ridge nodes. A field
//! fails when either term is clearly positive somewhere, or when a whole
//! cluster of nodes has both terms clearly negative.

use std::collections::VecDeque;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::geometry::Point2;
use crate::grid::{Field, Grid, GridError, NodeClass, StencilSet};
use crate::output::sig9;
use crate::solver::{ArmExtremes, DEFAULT_TOL_ITER};

/// Values below this are treated as negative rather than rounding noise.
const NEGATIVE_SLACK: f64 = 1e-12;
/// Witness locations listed per failure reason.
const MAX_WITNESSES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum EigenError {
    #[error("field is negative at ({x}, {y}): {value:e}")]
    Negative { x: f64, y: f64, value: f64 },
    #[error("field does not vanish outside the domain at ({x}, {y}): {value:e}")]
    NotVanishing { x: f64, y: f64, value: f64 },
    #[error("field is identically zero")]
    ZeroField,
    #[error("lambda must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Thresholds of the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub tol_a: f64,
    pub tol_b: f64,
    pub margin_a: f64,
    pub margin_b: f64,
    pub cluster_min: usize,
    /// Nodes with smaller values carry no `a` or `b`.
    pub u_floor: f64,
}

impl Tolerances {
    /// `tol_a = 0.1Λ`, `margin_a = 0.2Λ`, `tol_b = 0.5`, `margin_b = 1`,
    /// clusters of 8 nodes, `u_floor = 10·tol_iter`.
    pub fn for_lambda(lambda: f64, tol_iter: f64) -> Self {
        Tolerances {
            tol_a: 0.1 * lambda,
            tol_b: 0.5,
            margin_a: 0.2 * lambda,
            margin_b: 1.0,
            cluster_min: 8,
            u_floor: 10.0 * tol_iter,
        }
    }

    pub fn default_for(lambda: f64) -> Self {
        Self::for_lambda(lambda, DEFAULT_TOL_ITER)
    }
}

/// Steepest descent slope `max (f(node) − value)/len` over the arms of
/// `node`, reading 0 at every cut arm.
pub fn grad_magnitude(stencil: &StencilSet, field: &Field, node: usize) -> f64 {
    descent_slope(stencil, &field.values, &stencil.zero_boundary(), node)
}

fn descent_slope(stencil: &StencilSet, values: &[f64], zeros: &[f64], node: usize) -> f64 {
    let u = values[node];
    let mut slope = f64::NEG_INFINITY;
    stencil.visit_arms(node, values, zeros, |_, v, len| {
        slope = slope.max((u - v) / len)
    });
    slope
}

/// Per-node terms of the equation; `NaN` where a term is not evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Interior nodes skipped because the field is below `u_floor` there.
    pub excluded: usize,
}

impl Residuals {
    /// CSV with header `x,y,a,b`, one row per interior node.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y,a,b")?;
        for n in grid.interior_nodes() {
            let p = grid.point(n);
            writeln!(
                out,
                "{},{},{},{}",
                sig9(p.x),
                sig9(p.y),
                sig9(self.a[n]),
                sig9(self.b[n])
            )?;
        }
        Ok(())
    }
}

fn check_field(grid: &Grid, field: &Field) -> Result<(), EigenError> {
    field.check_shape(grid)?;
    for (n, &value) in field.values.iter().enumerate() {
        let p = grid.point(n);
        if grid.class(n).is_interior() {
            if value < -NEGATIVE_SLACK || value.is_nan() {
                return Err(EigenError::Negative {
                    x: p.x,
                    y: p.y,
                    value,
                });
            }
        } else if value.abs() > NEGATIVE_SLACK {
            return Err(EigenError::NotVanishing {
                x: p.x,
                y: p.y,
                value,
            });
        }
    }
    Ok(())
}

/// The `a` and `b` terms at every interior node where `field ≥ u_floor`;
/// `b` is skipped on ridge nodes.
pub fn eigen_residuals(
    grid: &Grid,
    stencil: &StencilSet,
    field: &Field,
    lambda: f64,
    u_floor: f64,
) -> Result<Residuals, EigenError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(EigenError::BadLambda(lambda));
    }
    check_field(grid, field)?;
    let zeros = stencil.zero_boundary();
    let mut a = vec![f64::NAN; grid.len()];
    let mut b = vec![f64::NAN; grid.len()];
    let mut excluded = 0;
    for n in grid.interior_nodes() {
        let u = field.values[n];
        if u < u_floor {
            excluded += 1;
            continue;
        }
        a[n] = lambda - descent_slope(stencil, &field.values, &zeros, n) / u;
        if grid.class(n) != NodeClass::RidgeFixed {
            b[n] = ArmExtremes::at(stencil, n, &field.values, &zeros, u).operator(u);
        }
    }
    Ok(Residuals { a, b, excluded })
}

/// Largest gradient over the interior divided by the largest value.
pub fn rayleigh_quotient(
    grid: &Grid,
    stencil: &StencilSet,
    field: &Field,
) -> Result<f64, EigenError> {
    check_field(grid, field)?;
    let top = field.values.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(EigenError::ZeroField);
    }
    let zeros = stencil.zero_boundary();
    let slope = grid
        .interior_nodes()
        .map(|n| descent_slope(stencil, &field.values, &zeros, n))
        .fold(0.0, f64::max);
    Ok(slope / top)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailReason {
    /// `a > tol_a` or `b > tol_b` somewhere.
    SupersolutionViolated,
    /// A connected cluster where `a < −margin_a` and `b < −margin_b`.
    StrictSupersolutionRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Located {
    pub value: f64,
    pub at: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reason {
    pub reason: FailReason,
    pub witnesses: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenReport {
    pub lambda: f64,
    pub max_a: Option<Located>,
    pub max_b: Option<Located>,
    /// Nodes in clusters of at least `cluster_min` nodes with both terms
    /// below their negative margins.
    pub strict_region_nodes: usize,
    pub excluded_nodes: usize,
    pub verdict: Verdict,
    pub reasons: Vec<Reason>,
    pub tolerances: Tolerances,
}

impl EigenReport {
    pub fn passes(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn has_reason(&self, reason: FailReason) -> bool {
        self.reasons.iter().any(|r| r.reason == reason)
    }
}

fn at(grid: &Grid, n: usize) -> [f64; 2] {
    let p: Point2 = grid.point(n);
    [p.x, p.y]
}

fn arg_max(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (n, &v) in values.iter().enumerate() {
        if !v.is_nan() && best.is_none_or(|b| v > values[b]) {
            best = Some(n);
        }
    }
    best
}

/// Nodes sorted by decreasing `key`, ties by index, at most `MAX_WITNESSES`.
fn strongest(mut nodes: Vec<usize>, key: impl Fn(usize) -> f64) -> Vec<usize> {
    nodes.sort_by(|&p, &q| key(q).total_cmp(&key(p)).then(p.cmp(&q)));
    nodes.truncate(MAX_WITNESSES);
    nodes
}

/// 8-connected components of the nodes where `mask` holds.
fn clusters(grid: &Grid, mask: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; grid.len()];
    let mut out = Vec::new();
    for start in 0..grid.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut component = Vec::new();
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            component.push(n);
            let (i, j) = grid.coords(n);
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii < 0 || jj < 0 || ii >= grid.nx as i64 || jj >= grid.ny as i64 {
                        continue;
                    }
                    let m = grid.index(ii as usize, jj as usize);
                    if mask[m] && !seen[m] {
                        seen[m] = true;
                        queue.push_back(m);
                    }
                }
            }
        }
        component.sort_unstable();
        out.push(component);
    }
    out
}

/// Verdict of the discrete eigenfunction check.
pub fn eigen_verdict(
    grid: &Grid,
    stencil: &StencilSet,
    field: &Field,
    lambda: f64,
    tol: &Tolerances,
) -> Result<EigenReport, EigenError> {
    let res = eigen_residuals(grid, stencil, field, lambda, tol.u_floor)?;
    Ok(verdict_from(grid, &res, lambda, tol))
}

/// Verdict from precomputed residuals.
pub fn verdict_from(grid: &Grid, res: &Residuals, lambda: f64, tol: &Tolerances) -> EigenReport {
    let located = |values: &[f64]| {
        arg_max(values).map(|n| Located {
            value: values[n],
            at: at(grid, n),
        })
    };
    let mut reasons = Vec::new();

    let above: Vec<usize> = (0..grid.len())
        .filter(|&n| res.a[n] > tol.tol_a || res.b[n] > tol.tol_b)
        .collect();
    if !above.is_empty() {
        // Rank by how far past its tolerance either term goes.
        let excess = |n: usize| {
            let ea = if res.a[n] > tol.tol_a {
                res.a[n] - tol.tol_a
            } else {
                0.0
            };
            let eb = if res.b[n] > tol.tol_b {
                res.b[n] - tol.tol_b
            } else {
                0.0
            };
            ea.max(eb)
        };
        reasons.push(Reason {
            reason: FailReason::SupersolutionViolated,
            witnesses: strongest(above, excess)
                .into_iter()
                .map(|n| at(grid, n))
                .collect(),
        });
    }

    let mask: Vec<bool> = (0..grid.len())
        .map(|n| res.a[n] < -tol.margin_a && res.b[n] < -tol.margin_b)
        .collect();
    let strict: Vec<usize> = clusters(grid, &mask)
        .into_iter()
        .filter(|c| c.len() >= tol.cluster_min)
        .flatten()
        .collect();
    let strict_region_nodes = strict.len();
    if !strict.is_empty() {
        reasons.push(Reason {
            reason: FailReason::StrictSupersolutionRegion,
            witnesses: strongest(strict, |n| -res.b[n])
                .into_iter()
                .map(|n| at(grid, n))
                .collect(),
        });
    }

    EigenReport {
        lambda,
        max_a: located(&res.a),
        max_b: located(&res.b),
        strict_region_nodes,
        excluded_nodes: res.excluded,
        verdict: if reasons.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        reasons,
        tolerances: *tol,
    }
}
