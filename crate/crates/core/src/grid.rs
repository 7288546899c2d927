//! Uniform Cartesian grids over a [`Domain`] and the wide stencils used on them.
//!
//! Nodes sit at integer multiples of the spacing `h`, so points such as
//! (-1, 0) and (1, 0) are grid nodes whenever `1/h` is an integer. Arms of
//! the stencil that would leave the domain are cut at the boundary crossing;
//! boundary data enters the discrete problems only through those cut arms.

use std::io::{self, Write};

use thiserror::Error;

use crate::geometry::{BoundaryExit, Domain, GeometryError, Point2, RidgeSet};
use crate::output::sig9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid spacing must be positive and finite, got {0}")]
    BadSpacing(f64),
    #[error("stencil radius must be at least 2 cells, got {0}")]
    BadStencil(usize),
    #[error("stencil reach k*h = {reach} must be smaller than the inradius {inradius}")]
    StencilTooWide { reach: f64, inradius: f64 },
    #[error("grid would have {0} nodes, more than the limit of {MAX_NODES}")]
    TooManyNodes(usize),
    #[error("clipping arm {offset:?} at node ({x}, {y}): {source}")]
    Clipping {
        x: f64,
        y: f64,
        offset: (i32, i32),
        source: GeometryError,
    },
    #[error("field has {got} values, grid has {expected} nodes")]
    FieldShape { got: usize, expected: usize },
}

pub const MAX_NODES: usize = 20_000_000;

/// Nodes closer than this to the boundary count as boundary nodes.
pub const ON_BOUNDARY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeClass {
    Interior,
    Exterior,
    /// Interior node pinned to the high ridge.
    RidgeFixed,
}

impl NodeClass {
    pub fn is_interior(self) -> bool {
        self != NodeClass::Exterior
    }

    pub fn label(self) -> &'static str {
        match self {
            NodeClass::Interior => "interior",
            NodeClass::Exterior => "exterior",
            NodeClass::RidgeFixed => "ridge",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub h: f64,
    pub origin: Point2,
    pub nx: usize,
    pub ny: usize,
    /// Integer coordinates of the origin node, `origin = (i0, j0)·h`.
    lattice_origin: (i64, i64),
    class: Vec<NodeClass>,
    delta: Vec<f64>,
    domain: Domain,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn point(&self, idx: usize) -> Point2 {
        let (i, j) = self.coords(idx);
        Point2::new(
            (self.lattice_origin.0 + i as i64) as f64 * self.h,
            (self.lattice_origin.1 + j as i64) as f64 * self.h,
        )
    }

    pub fn class(&self, idx: usize) -> NodeClass {
        self.class[idx]
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.class
    }

    /// Cached distance to the boundary (0 outside).
    pub fn delta(&self, idx: usize) -> f64 {
        self.delta[idx]
    }

    pub fn deltas(&self) -> &[f64] {
        &self.delta
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&n| self.class[n].is_interior())
    }

    pub fn ridge_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&n| self.class[n] == NodeClass::RidgeFixed)
    }

    pub fn interior_count(&self) -> usize {
        self.interior_nodes().count()
    }

    /// Node closest to `p` (clamped to the grid).
    pub fn nearest_node(&self, p: Point2) -> usize {
        let fi = ((p.x - self.origin.x) / self.h)
            .round()
            .clamp(0.0, (self.nx - 1) as f64);
        let fj = ((p.y - self.origin.y) / self.h)
            .round()
            .clamp(0.0, (self.ny - 1) as f64);
        self.index(fi as usize, fj as usize)
    }

    pub fn max_delta(&self) -> f64 {
        self.delta.iter().copied().fold(0.0, f64::max)
    }

    /// Interior nodes whose δ is within `ridge_tol` of the grid maximum.
    pub fn argmax_ridge(&self, ridge_tol: f64) -> RidgeSet {
        let top = self.max_delta();
        let points = self
            .interior_nodes()
            .filter(|&n| self.delta[n] >= top - ridge_tol)
            .map(|n| self.point(n))
            .collect();
        RidgeSet::NodeSet { points }
    }

    /// Field dump: `x,y,class,delta,value`, row-major from the origin.
    pub fn write_field_csv<W: Write>(&self, field: &Field, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y,class,delta,value")?;
        for idx in 0..self.len() {
            let p = self.point(idx);
            writeln!(
                out,
                "{},{},{},{},{}",
                sig9(p.x),
                sig9(p.y),
                self.class[idx].label(),
                sig9(self.delta[idx]),
                sig9(field.values[idx])
            )?;
        }
        Ok(())
    }
}

/// Scalar values on every grid node. Exterior entries are kept at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Field {
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f` at interior nodes; exterior nodes get 0.
    pub fn from_fn(grid: &Grid, f: impl Fn(Point2) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|n| {
                if grid.class(n).is_interior() {
                    f(grid.point(n))
                } else {
                    0.0
                }
            })
            .collect();
        Field { values }
    }

    /// The distance function δ.
    pub fn delta(grid: &Grid) -> Self {
        Field {
            values: grid.deltas().to_vec(),
        }
    }

    pub fn check_shape(&self, grid: &Grid) -> Result<(), GridError> {
        if self.values.len() != grid.len() {
            return Err(GridError::FieldShape {
                got: self.values.len(),
                expected: grid.len(),
            });
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field {
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Offset {
    pub di: i32,
    pub dj: i32,
    pub dir: Point2,
    /// |(di, dj)|, the nominal arm length in cells.
    pub cells: f64,
}

/// Where an arm of the stencil ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArmEnd {
    Node(usize),
    /// Cut at the boundary point `q`; `slot` indexes the boundary datum table.
    Boundary {
        q: Point2,
        slot: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arm {
    pub offset: usize,
    pub end: ArmEnd,
    pub len: f64,
}

/// Disk stencil of all integer offsets with `di² + dj² ≤ k²`, together with
/// the boundary-clipped arms of nodes near the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilSet {
    pub k: usize,
    pub offsets: Vec<Offset>,
    h: f64,
    /// Per offset, the change in flat node index.
    strides: Vec<isize>,
    /// Per node: index into `ranges` or `u32::MAX` when all arms are full.
    clip_of: Vec<u32>,
    ranges: Vec<(u32, u32)>,
    arms: Vec<Arm>,
    boundary_points: Vec<Point2>,
}

/// Offsets of the disk stencil of radius `k`, in lexicographic `(di, dj)` order.
pub fn disk_offsets(k: usize) -> Vec<Offset> {
    let k = k as i32;
    let mut offsets = Vec::new();
    for di in -k..=k {
        for dj in -k..=k {
            if (di, dj) != (0, 0) && di * di + dj * dj <= k * k {
                let cells = f64::from(di).hypot(f64::from(dj));
                offsets.push(Offset {
                    di,
                    dj,
                    dir: Point2::new(f64::from(di) / cells, f64::from(dj) / cells),
                    cells,
                });
            }
        }
    }
    offsets
}

impl StencilSet {
    pub fn reach(&self) -> f64 {
        self.k as f64 * self.h
    }

    /// Whether every arm of `node` is a full, uncut arm.
    pub fn all_full(&self, node: usize) -> bool {
        self.clip_of[node] == u32::MAX
    }

    /// Boundary crossing points of all cut arms, indexed by `ArmEnd::Boundary::slot`.
    pub fn boundary_points(&self) -> &[Point2] {
        &self.boundary_points
    }

    /// Boundary datum table for a Dirichlet function `g`.
    pub fn boundary_values(&self, g: impl Fn(Point2) -> f64) -> Vec<f64> {
        self.boundary_points.iter().map(|&q| g(q)).collect()
    }

    pub fn zero_boundary(&self) -> Vec<f64> {
        vec![0.0; self.boundary_points.len()]
    }

    /// Arms of an interior node.
    pub fn arms(&self, node: usize) -> Vec<Arm> {
        match self.clip_of[node] {
            u32::MAX => self
                .offsets
                .iter()
                .enumerate()
                .map(|(o, off)| Arm {
                    offset: o,
                    end: ArmEnd::Node((node as isize + self.strides[o]) as usize),
                    len: off.cells * self.h,
                })
                .collect(),
            c => {
                let (a, b) = self.ranges[c as usize];
                self.arms[a as usize..b as usize].to_vec()
            }
        }
    }

    /// Calls `visit(offset, value, len)` for every arm of `node`, reading node
    /// values from `values` and cut-arm values from `boundary`.
    #[inline]
    pub fn visit_arms<F: FnMut(usize, f64, f64)>(
        &self,
        node: usize,
        values: &[f64],
        boundary: &[f64],
        mut visit: F,
    ) {
        match self.clip_of[node] {
            u32::MAX => {
                for (o, (off, &stride)) in self.offsets.iter().zip(&self.strides).enumerate() {
                    let target = (node as isize + stride) as usize;
                    visit(o, values[target], off.cells * self.h);
                }
            }
            c => {
                let (a, b) = self.ranges[c as usize];
                for arm in &self.arms[a as usize..b as usize] {
                    let v = match arm.end {
                        ArmEnd::Node(t) => values[t],
                        ArmEnd::Boundary { slot, .. } => boundary[slot],
                    };
                    visit(arm.offset, v, arm.len);
                }
            }
        }
    }

    /// Value and length of one arm: the node value when the arm stays inside,
    /// otherwise the boundary datum at the crossing and the cut length.
    pub fn arm_sample(
        &self,
        field: &Field,
        boundary: &[f64],
        node: usize,
        offset: usize,
    ) -> Option<(f64, f64)> {
        let mut found = None;
        self.visit_arms(node, &field.values, boundary, |o, v, len| {
            if o == offset {
                found = Some((v, len));
            }
        });
        found
    }
}

/// Default snapping distance for ridge nodes: every ridge point is within
/// `h/√2` of some lattice node, and no second row of nodes is captured.
pub fn default_ridge_snap(h: f64) -> f64 {
    h * std::f64::consts::FRAC_1_SQRT_2 * (1.0 + 1e-9)
}

pub fn build_grid(domain: &Domain, h: f64, k: usize) -> Result<(Grid, StencilSet), GridError> {
    build_grid_with_snap(domain, h, k, default_ridge_snap(h))
}

/// Builds the grid and stencil. Interior nodes within `ridge_snap` of the
/// analytic ridge, plus the node nearest to each ridge point, become
/// [`NodeClass::RidgeFixed`].
pub fn build_grid_with_snap(
    domain: &Domain,
    h: f64,
    k: usize,
    ridge_snap: f64,
) -> Result<(Grid, StencilSet), GridError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(GridError::BadSpacing(h));
    }
    if k < 2 {
        return Err(GridError::BadStencil(k));
    }
    let reach = k as f64 * h;
    if reach >= domain.inradius() {
        return Err(GridError::StencilTooWide {
            reach,
            inradius: domain.inradius(),
        });
    }
    let (lo, hi) = domain.bbox;
    let i0 = (lo.x / h).floor() as i64 - 1;
    let j0 = (lo.y / h).floor() as i64 - 1;
    let i1 = (hi.x / h).ceil() as i64 + 1;
    let j1 = (hi.y / h).ceil() as i64 + 1;
    let nx = (i1 - i0 + 1) as usize;
    let ny = (j1 - j0 + 1) as usize;
    if nx.saturating_mul(ny) > MAX_NODES {
        return Err(GridError::TooManyNodes(nx.saturating_mul(ny)));
    }
    let origin = Point2::new(i0 as f64 * h, j0 as f64 * h);
    let mut grid = Grid {
        h,
        origin,
        nx,
        ny,
        lattice_origin: (i0, j0),
        class: vec![NodeClass::Exterior; nx * ny],
        delta: vec![0.0; nx * ny],
        domain: domain.clone(),
    };
    for idx in 0..grid.len() {
        let sd = domain.signed_distance(grid.point(idx));
        if sd < -ON_BOUNDARY {
            grid.class[idx] = NodeClass::Interior;
            grid.delta[idx] = -sd;
        }
    }

    let ridge = domain.high_ridge();
    for idx in 0..grid.len() {
        if grid.class[idx].is_interior() && ridge.distance(grid.point(idx)) <= ridge_snap {
            grid.class[idx] = NodeClass::RidgeFixed;
        }
    }
    let anchors = match &ridge {
        RidgeSet::Segment { a, b } => vec![*a, *b],
        other => other.points(),
    };
    for p in anchors {
        let n = grid.nearest_node(p);
        if grid.class[n].is_interior() {
            grid.class[n] = NodeClass::RidgeFixed;
        }
    }

    let stencil = build_stencil(&grid, k)?;
    Ok((grid, stencil))
}

fn build_stencil(grid: &Grid, k: usize) -> Result<StencilSet, GridError> {
    let h = grid.h;
    let offsets = disk_offsets(k);
    let strides = offsets
        .iter()
        .map(|o| o.dj as isize * grid.nx as isize + o.di as isize)
        .collect::<Vec<_>>();
    let reach = k as f64 * h;
    let mut clip_of = vec![u32::MAX; grid.len()];
    let mut ranges = Vec::new();
    let mut arms = Vec::new();
    let mut boundary_points = Vec::new();
    for node in grid.interior_nodes() {
        let (i, j) = grid.coords(node);
        // δ can exceed the reach by a rounding error while a lattice end
        // point still sits on the boundary
        if grid.delta(node) > reach
            && strides
                .iter()
                .all(|&s| grid.class((node as isize + s) as usize).is_interior())
        {
            continue;
        }
        let p = grid.point(node);
        let start = arms.len() as u32;
        for (o, off) in offsets.iter().enumerate() {
            let len = off.cells * h;
            let (ti, tj) = (i as i64 + i64::from(off.di), j as i64 + i64::from(off.dj));
            let target = (ti >= 0 && tj >= 0 && (ti as usize) < grid.nx && (tj as usize) < grid.ny)
                .then(|| grid.index(ti as usize, tj as usize));
            let clipping_error = |source| GridError::Clipping {
                x: p.x,
                y: p.y,
                offset: (off.di, off.dj),
                source,
            };
            let mut exit = if grid.delta(node) > len {
                None
            } else {
                grid.domain
                    .boundary_exit(p, off.dir, len)
                    .map_err(clipping_error)?
            };
            if exit.is_none() && !target.is_some_and(|t| grid.class(t).is_interior()) {
                // the lattice end point sits on the boundary, the ray end point
                // rounded to just inside it
                let q = p + off.dir * len;
                if grid.domain.signed_distance(q).abs() > 1e-10 {
                    return Err(clipping_error(GeometryError::Unbracketed {
                        x: p.x,
                        y: p.y,
                        dx: off.dir.x,
                        dy: off.dir.y,
                    }));
                }
                exit = Some(BoundaryExit { t: len, q });
            }
            let arm = match exit {
                Some(e) => {
                    boundary_points.push(e.q);
                    let slot = boundary_points.len() - 1;
                    Arm {
                        offset: o,
                        end: ArmEnd::Boundary { q: e.q, slot },
                        len: e.t,
                    }
                }
                None => Arm {
                    offset: o,
                    end: ArmEnd::Node(target.expect("inside arm")),
                    len,
                },
            };
            arms.push(arm);
        }
        clip_of[node] = ranges.len() as u32;
        ranges.push((start, arms.len() as u32));
    }
    Ok(StencilSet {
        k,
        offsets,
        h,
        strides,
        clip_of,
        ranges,
        arms,
        boundary_points,
    })
}
