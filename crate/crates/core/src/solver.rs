//! Wide-stencil discretization of the infinity Laplacian and the Dirichlet
//! solver built on it.
//!
//! At a node with value `u`, let `M` be the value at the end of the arm with
//! the steepest ascent `(M − u)/d_M` and `m` the value at the end of the arm
//! with the steepest descent `(m − u)/d_m`. The discrete operator is
//!
//! ```text
//! D∞u = 2/(d_M + d_m) · ((M − u)/d_M + (m − u)/d_m)
//! ```
//!
//! which approximates the normalized operator `Δ∞u / |∇u|²`. Its zero in `u`
//! is the value where the steepest ascent and descent slopes agree; there it
//! equals the weighted midrange `(d_m·M + d_M·m)/(d_M + d_m)` of the active
//! pair. That value is nondecreasing in every neighbour value and commutes
//! with adding constants, so Gauss–Seidel sweeps of it are monotone,
//! nonexpansive in the sup norm, and obey the discrete maximum principle.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{Domain, Point2};
use crate::grid::{build_grid, Arm, ArmEnd, Field, Grid, GridError, StencilSet};

pub const DEFAULT_TOL_ITER: f64 = 1e-9;
pub const DEFAULT_K: usize = 4;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("iteration tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("fixed node {0} is not an interior node")]
    FixedNotInterior(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(
        "no convergence after {} sweeps: last update {:e} > tolerance {:e}",
        .0.report.iterations, .0.report.final_update, .0.report.tol_iter
    )]
    NonConvergence(Box<PartialSolve>),
}

/// State left behind by a solve that ran out of sweeps.
#[derive(Debug)]
pub struct PartialSolve {
    pub field: Field,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Sup-norm change of the last sweep.
    pub final_update: f64,
    pub tol_iter: f64,
    /// Largest |D∞u| over free interior nodes at the returned field.
    pub residual_max: f64,
    pub wall_time: f64,
    /// Linear pair solves used to warm-start the sweeps.
    pub pair_solves: usize,
    #[serde(skip)]
    pub update_history: Vec<f64>,
}

/// Slopes within this relative distance are treated as equal when picking
/// arms. A purely relative test keeps the choice invariant under scaling.
const SLOPE_TIE: f64 = 1e-12;

/// The steepest ascending and steepest descending arms around a node.
///
/// `max`/`d_max` is the arm maximizing `(value − u)/len`, `min`/`d_min` the
/// arm minimizing it. Slope ties go to the longer arm, then to the
/// lexicographically smaller offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmExtremes {
    pub max: f64,
    pub d_max: f64,
    pub min: f64,
    pub d_min: f64,
}

#[inline]
fn ties(a: f64, b: f64) -> bool {
    b.is_finite() && (a - b).abs() <= SLOPE_TIE * a.abs().max(b.abs())
}

impl ArmExtremes {
    /// Steepest arms as seen from the node value `u`.
    #[inline]
    pub fn at(stencil: &StencilSet, node: usize, values: &[f64], boundary: &[f64], u: f64) -> Self {
        let (mut up, mut max, mut d_max) = (f64::NEG_INFINITY, 0.0, 0.0);
        let (mut down, mut min, mut d_min) = (f64::INFINITY, 0.0, 0.0);
        stencil.visit_arms(node, values, boundary, |_, v, len| {
            let slope = (v - u) / len;
            if ties(slope, up) {
                if len > d_max {
                    (up, max, d_max) = (slope, v, len);
                }
            } else if slope > up {
                (up, max, d_max) = (slope, v, len);
            }
            if ties(slope, down) {
                if len > d_min {
                    (down, min, d_min) = (slope, v, len);
                }
            } else if slope < down {
                (down, min, d_min) = (slope, v, len);
            }
        });
        ArmExtremes {
            max,
            d_max,
            min,
            d_min,
        }
    }

    /// Weighted midrange `(d_min·max + d_max·min)/(d_max + d_min)` of the pair.
    #[inline]
    pub fn midrange(&self) -> f64 {
        (self.d_min * self.max + self.d_max * self.min) / (self.d_max + self.d_min)
    }

    #[inline]
    pub fn operator(&self, u: f64) -> f64 {
        2.0 / (self.d_max + self.d_min)
            * ((self.max - u) / self.d_max + (self.min - u) / self.d_min)
    }
}

/// Node value at which the steepest ascent slope equals the steepest descent
/// slope, i.e. the zero of [`discrete_inf_laplacian`] in the node value.
pub fn local_solve(stencil: &StencilSet, node: usize, values: &[f64], boundary: &[f64]) -> f64 {
    LocalSolver::default().solve(stencil, node, values, boundary)
}

/// Reusable arm buffer for [`local_solve`].
///
/// The gap between the two steepest slopes is strictly decreasing in the
/// node value. Starting from the current value, the steepest pair seen from
/// the candidate gives the next candidate; a bracket on the root falls back
/// to bisection whenever that step leaves it.
#[derive(Debug, Default, Clone)]
pub struct LocalSolver {
    values: Vec<f64>,
    lens: Vec<f64>,
    inv: Vec<f64>,
}

impl LocalSolver {
    pub fn solve(
        &mut self,
        stencil: &StencilSet,
        node: usize,
        values: &[f64],
        boundary: &[f64],
    ) -> f64 {
        self.values.clear();
        self.lens.clear();
        self.inv.clear();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        stencil.visit_arms(node, values, boundary, |_, v, len| {
            self.values.push(v);
            self.lens.push(len);
            self.inv.push(1.0 / len);
            lo = lo.min(v);
            hi = hi.max(v);
        });
        if !(hi > lo) {
            return hi;
        }
        let (mut left, mut right) = (lo, hi);
        let mut u = values[node];
        if !(u > lo && u < hi) {
            u = 0.5 * (lo + hi);
        }
        for _ in 0..200 {
            let (mut up, mut i_up) = (f64::NEG_INFINITY, 0);
            let (mut dn, mut i_dn) = (f64::NEG_INFINITY, 0);
            for (i, (&v, &w)) in self.values.iter().zip(&self.inv).enumerate() {
                let rise = (v - u) * w;
                if rise > up {
                    (up, i_up) = (rise, i);
                }
                if -rise > dn {
                    (dn, i_dn) = (-rise, i);
                }
            }
            let gap = up - dn;
            if gap.abs() <= 4.0 * f64::EPSILON * (up.abs() + dn.abs()) {
                break;
            }
            if gap > 0.0 {
                left = u;
            } else {
                right = u;
            }
            if right - left <= 2.0 * f64::EPSILON * (left.abs() + right.abs()) {
                break;
            }
            let (d_up, d_dn) = (self.lens[i_up], self.lens[i_dn]);
            let next = (d_dn * self.values[i_up] + d_up * self.values[i_dn]) / (d_up + d_dn);
            u = if next > left && next < right {
                next
            } else {
                0.5 * (left + right)
            };
        }
        u
    }
}

/// Discrete normalized infinity Laplacian of `field` at `node`.
pub fn discrete_inf_laplacian(
    stencil: &StencilSet,
    field: &Field,
    boundary: &[f64],
    node: usize,
) -> f64 {
    let u = field.values[node];
    ArmExtremes::at(stencil, node, &field.values, boundary, u).operator(u)
}

/// Dirichlet problem for the discrete infinity Laplacian.
#[derive(Debug, Clone)]
pub struct BVProblem<'a> {
    pub grid: &'a Grid,
    pub stencil: &'a StencilSet,
    /// Boundary datum at every cut arm (see [`StencilSet::boundary_values`]).
    pub boundary: Vec<f64>,
    /// Interior nodes held at prescribed values.
    pub fixed: Vec<(usize, f64)>,
}

impl<'a> BVProblem<'a> {
    pub fn new(
        grid: &'a Grid,
        stencil: &'a StencilSet,
        g: impl Fn(Point2) -> f64,
        fixed: Vec<(usize, f64)>,
    ) -> Result<Self, SolveError> {
        if let Some(&(n, _)) = fixed.iter().find(|(n, _)| !grid.class(*n).is_interior()) {
            return Err(SolveError::FixedNotInterior(n));
        }
        Ok(BVProblem {
            grid,
            stencil,
            boundary: stencil.boundary_values(g),
            fixed,
        })
    }

    /// The potential problem: 0 on the boundary, 1 on the ridge nodes.
    pub fn potential(grid: &'a Grid, stencil: &'a StencilSet) -> Self {
        let fixed = grid.ridge_nodes().map(|n| (n, 1.0)).collect();
        BVProblem {
            grid,
            stencil,
            boundary: stencil.zero_boundary(),
            fixed,
        }
    }

    pub fn free_mask(&self) -> Vec<bool> {
        let mut free: Vec<bool> = self
            .grid
            .classes()
            .iter()
            .map(|c| c.is_interior())
            .collect();
        for &(n, _) in &self.fixed {
            free[n] = false;
        }
        free
    }

    /// Starting guess `(δ / max δ) · max fixed`, with fixed values in place.
    pub fn initial_field(&self) -> Field {
        let top = self
            .fixed
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let scale = if top.is_finite() {
            top / self.grid.max_delta()
        } else {
            0.0
        };
        let mut field = Field::delta(self.grid).scaled(scale);
        for &(n, v) in &self.fixed {
            field.values[n] = v;
        }
        field
    }

    /// Largest change one local solve would make at a free node.
    pub fn update_residual(&self, field: &Field) -> f64 {
        let mut scratch = LocalSolver::default();
        let free = self.free_mask();
        (0..self.grid.len())
            .filter(|&n| free[n])
            .map(|n| {
                (scratch.solve(self.stencil, n, &field.values, &self.boundary) - field.values[n])
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest |D∞u| over the free nodes.
    pub fn residual_max(&self, field: &Field) -> f64 {
        let free = self.free_mask();
        (0..self.grid.len())
            .filter(|&n| free[n])
            .map(|n| discrete_inf_laplacian(self.stencil, field, &self.boundary, n).abs())
            .fold(0.0, f64::max)
    }
}

/// Default sweep budget, `200·(nx + ny)`.
pub fn default_max_sweeps(grid: &Grid) -> usize {
    200 * (grid.nx + grid.ny)
}

/// Default cap on damped pair solves in [`solve_dirichlet_fast`].
pub const DEFAULT_PAIR_STEPS: usize = 300;

/// Gauss–Seidel sweeps from [`BVProblem::initial_field`].
pub fn solve_dirichlet(
    problem: &BVProblem<'_>,
    tol_iter: f64,
    max_sweeps: usize,
) -> Result<(Field, SolveReport), SolveError> {
    solve_dirichlet_from(problem, problem.initial_field(), tol_iter, max_sweeps)
}

/// Visits the free nodes in `order` along each of the four raster
/// orientations in turn and returns the sup-norm change of the whole sweep.
struct Sweeper {
    order: Vec<usize>,
    rows: Vec<std::ops::Range<usize>>,
    before: Vec<f64>,
    scratch: LocalSolver,
}

impl Sweeper {
    fn new(problem: &BVProblem<'_>) -> Self {
        let free = problem.free_mask();
        let order: Vec<usize> = (0..problem.grid.len()).filter(|&n| free[n]).collect();
        Sweeper {
            rows: split_rows(&order, problem.grid.nx),
            before: vec![0.0; order.len()],
            order,
            scratch: LocalSolver::default(),
        }
    }

    fn sweep(&mut self, problem: &BVProblem<'_>, field: &mut Field) -> f64 {
        for (b, &n) in self.before.iter_mut().zip(&self.order) {
            *b = field.values[n];
        }
        // Forwards, reversed in i, reversed in j, reversed in both. The free
        // list is row-major, so each orientation walks its row ranges.
        let rows = &self.rows;
        for orientation in 0..4 {
            for r in 0..rows.len() {
                let range = &rows[if orientation & 2 == 0 {
                    r
                } else {
                    rows.len() - 1 - r
                }];
                for idx in 0..range.len() {
                    let pos = if orientation & 1 == 0 {
                        range.start + idx
                    } else {
                        range.end - 1 - idx
                    };
                    let n = self.order[pos];
                    field.values[n] =
                        self.scratch
                            .solve(problem.stencil, n, &field.values, &problem.boundary);
                }
            }
        }
        self.before
            .iter()
            .zip(&self.order)
            .map(|(&b, &n)| (field.values[n] - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Ranges of `order` (sorted flat indices) sharing a grid row.
fn split_rows(order: &[usize], nx: usize) -> Vec<std::ops::Range<usize>> {
    let mut rows = Vec::new();
    let mut start = 0;
    for pos in 1..=order.len() {
        if pos == order.len() || order[pos] / nx != order[start] / nx {
            rows.push(start..pos);
            start = pos;
        }
    }
    rows
}

/// Gauss–Seidel sweeps of the weighted-midrange update until the sup-norm
/// change of a sweep is at most `tol_iter`. One sweep visits the free nodes
/// in each of the four raster orientations in turn, so the sweep map is the
/// same every time and its change never grows. Fixed nodes keep the values
/// given in the problem.
pub fn solve_dirichlet_from(
    problem: &BVProblem<'_>,
    field: Field,
    tol_iter: f64,
    max_sweeps: usize,
) -> Result<(Field, SolveReport), SolveError> {
    run_sweeps(problem, field, tol_iter, max_sweeps, Instant::now(), 0)
}

fn run_sweeps(
    problem: &BVProblem<'_>,
    mut field: Field,
    tol_iter: f64,
    max_sweeps: usize,
    started: Instant,
    pair_solves: usize,
) -> Result<(Field, SolveReport), SolveError> {
    if !(tol_iter > 0.0 && tol_iter.is_finite()) {
        return Err(SolveError::BadTolerance(tol_iter));
    }
    field.check_shape(problem.grid)?;
    for &(n, v) in &problem.fixed {
        field.values[n] = v;
    }
    let mut sweeper = Sweeper::new(problem);
    let mut history = Vec::new();
    let mut last = f64::INFINITY;
    while history.len() < max_sweeps {
        last = sweeper.sweep(problem, &mut field);
        history.push(last);
        if last <= tol_iter {
            break;
        }
    }
    let report = SolveReport {
        iterations: history.len(),
        final_update: last,
        tol_iter,
        residual_max: problem.residual_max(&field),
        wall_time: started.elapsed().as_secs_f64(),
        pair_solves,
        update_history: history,
    };
    if last > tol_iter {
        return Err(SolveError::NonConvergence(Box::new(PartialSolve {
            field,
            report,
        })));
    }
    Ok((field, report))
}

/// Replaces the free values by the exact solution of the linear system that
/// keeps, at every free node, the steepest ascent and descent arms seen from
/// `field`. Returns `None` when the system is singular.
pub fn pair_solve(problem: &BVProblem<'_>, field: &Field) -> Option<Field> {
    use faer::prelude::*;
    use faer::sparse::{SparseColMat, Triplet};

    let grid = problem.grid;
    let free = problem.free_mask();
    let mut index = vec![usize::MAX; grid.len()];
    let mut count = 0;
    for n in 0..grid.len() {
        if free[n] {
            index[n] = count;
            count += 1;
        }
    }
    if count == 0 {
        return Some(field.clone());
    }
    let mut triplets = Vec::with_capacity(3 * count);
    let mut rhs = vec![0.0; count];
    for n in 0..grid.len() {
        if !free[n] {
            continue;
        }
        let (up, dn) = steepest_arms(problem, field, n)?;
        let row = index[n];
        triplets.push(Triplet::new(row, row, up.len + dn.len));
        for (arm, w) in [(up, dn.len), (dn, up.len)] {
            match arm.end {
                ArmEnd::Node(t) if free[t] => triplets.push(Triplet::new(row, index[t], -w)),
                ArmEnd::Node(t) => rhs[row] += w * field.values[t],
                ArmEnd::Boundary { slot, .. } => rhs[row] += w * problem.boundary[slot],
            }
        }
    }
    let matrix = SparseColMat::<usize, f64>::try_new_from_triplets(count, count, &triplets).ok()?;
    let lu = matrix.sp_lu().ok()?;
    let x = lu.solve(Col::from_fn(count, |i| rhs[i]));
    let mut out = field.clone();
    for n in 0..grid.len() {
        if free[n] {
            let v = x[index[n]];
            if !v.is_finite() {
                return None;
            }
            out.values[n] = v;
        }
    }
    Some(out)
}

/// Steepest ascent and descent arms at `node`, with the tie rule of
/// [`ArmExtremes`].
fn steepest_arms(problem: &BVProblem<'_>, field: &Field, node: usize) -> Option<(Arm, Arm)> {
    let u = field.values[node];
    let (mut up, mut dn) = (None::<(f64, Arm)>, None::<(f64, Arm)>);
    for arm in problem.stencil.arms(node) {
        let v = match arm.end {
            ArmEnd::Node(t) => field.values[t],
            ArmEnd::Boundary { slot, .. } => problem.boundary[slot],
        };
        let rise = (v - u) / arm.len;
        let better = |best: &Option<(f64, Arm)>, s: f64| match best {
            None => true,
            Some((b, barm)) => {
                if ties(s, *b) {
                    arm.len > barm.len
                } else {
                    s > *b
                }
            }
        };
        if better(&up, rise) {
            up = Some((rise, arm));
        }
        if better(&dn, -rise) {
            dn = Some((-rise, arm));
        }
    }
    Some((up?.1, dn?.1))
}

/// Damped pair solves: each step moves toward [`pair_solve`] by the largest
/// of 1, 1/2, 1/4, ... that lowers [`BVProblem::update_residual`], and falls
/// back to a few sweeps when no step does. Stops once the residual is at most
/// `target` or after `max_steps` linear solves. Returns the field and the
/// number of linear solves.
pub fn pair_iterate(
    problem: &BVProblem<'_>,
    mut field: Field,
    target: f64,
    max_steps: usize,
) -> (Field, usize) {
    for &(n, v) in &problem.fixed {
        field.values[n] = v;
    }
    let mut sweeper = Sweeper::new(problem);
    let mut residual = problem.update_residual(&field);
    let mut steps = 0;
    while steps < max_steps && residual > target {
        let Some(candidate) = pair_solve(problem, &field) else {
            break;
        };
        steps += 1;
        let mut theta = 1.0;
        let mut accepted = false;
        while theta > 1e-3 {
            let mut trial = field.clone();
            for (x, &y) in trial.values.iter_mut().zip(&candidate.values) {
                *x += theta * (y - *x);
            }
            let r = problem.update_residual(&trial);
            if r < residual * (1.0 - 0.1 * theta) {
                (field, residual, accepted) = (trial, r, true);
                break;
            }
            theta *= 0.5;
        }
        if !accepted {
            for _ in 0..5 {
                sweeper.sweep(problem, &mut field);
            }
            residual = problem.update_residual(&field);
        }
    }
    (field, steps)
}

/// [`pair_iterate`] from [`BVProblem::initial_field`], then Gauss–Seidel
/// sweeps to `tol_iter`. The sweeps decide convergence, so the result is the
/// same fixed point [`solve_dirichlet`] reaches, usually in far fewer sweeps.
pub fn solve_dirichlet_fast(
    problem: &BVProblem<'_>,
    tol_iter: f64,
    max_sweeps: usize,
) -> Result<(Field, SolveReport), SolveError> {
    if !(tol_iter > 0.0 && tol_iter.is_finite()) {
        return Err(SolveError::BadTolerance(tol_iter));
    }
    let started = Instant::now();
    let (field, steps) = pair_iterate(
        problem,
        problem.initial_field(),
        1e-3 * tol_iter,
        DEFAULT_PAIR_STEPS,
    );
    run_sweeps(problem, field, tol_iter, max_sweeps, started, steps)
}

/// An infinity-harmonic potential together with its discretization.
#[derive(Debug, Clone)]
pub struct Potential {
    pub grid: Grid,
    pub stencil: StencilSet,
    pub field: Field,
    pub report: SolveReport,
}

impl Potential {
    pub fn value_at(&self, p: Point2) -> f64 {
        self.field.values[self.grid.nearest_node(p)]
    }
}

/// Solves for the potential: 0 on the boundary, 1 on the high ridge,
/// infinity-harmonic in between.
pub fn potential(
    domain: &Domain,
    h: f64,
    k: usize,
    tol_iter: f64,
) -> Result<Potential, SolveError> {
    let (grid, stencil) = build_grid(domain, h, k)?;
    let max_sweeps = default_max_sweeps(&grid);
    potential_on(grid, stencil, tol_iter, max_sweeps)
}

pub fn potential_on(
    grid: Grid,
    stencil: StencilSet,
    tol_iter: f64,
    max_sweeps: usize,
) -> Result<Potential, SolveError> {
    let (field, report) = {
        let problem = BVProblem::potential(&grid, &stencil);
        solve_dirichlet_fast(&problem, tol_iter, max_sweeps)?
    };
    Ok(Potential {
        grid,
        stencil,
        field,
        report,
    })
}
