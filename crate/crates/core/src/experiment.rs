//! Named experiments: potential solves, eigenfunction checks, the ε-sweep on
//! `S_ε` and grid refinement studies, with their CSV and JSON outputs.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::eigen::{
    eigen_residuals, rayleigh_quotient, verdict_from, EigenError, EigenReport, Residuals,
    Tolerances, Verdict,
};
use crate::geometry::{Domain, DomainSpec, GeometryError, Point2};
use crate::grid::{build_grid, Field, Grid, GridError, StencilSet};
use crate::output::{round_json, sig9};
use crate::solver::{
    default_max_sweeps, discrete_inf_laplacian, potential_on, solve_dirichlet_fast, BVProblem,
    SolveError, SolveReport,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("{0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Discretization shared by every run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub h: f64,
    pub k: usize,
    pub tol_iter: f64,
    /// Sweep budget; `None` for [`default_max_sweeps`].
    pub max_sweeps: Option<usize>,
}

impl Discretization {
    pub fn new(h: f64, k: usize, tol_iter: f64) -> Self {
        Discretization {
            h,
            k,
            tol_iter,
            max_sweeps: None,
        }
    }
}

/// Which field an eigenfunction check is run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Candidate {
    Delta,
    Potential,
}

impl Candidate {
    pub fn label(self) -> &'static str {
        match self {
            Candidate::Delta => "delta",
            Candidate::Potential => "potential",
        }
    }
}

/// The point `(1, 0)` for stadiums and `S_ε`, where the ridge of the
/// stadium ends and `S_ε` has no ridge.
pub fn default_probe(spec: &DomainSpec) -> Option<Point2> {
    match spec {
        DomainSpec::SEps { .. } | DomainSpec::Stadium { .. } => Some(Point2::new(1.0, 0.0)),
        _ => None,
    }
}

pub fn spec_json(spec: &DomainSpec) -> Value {
    match *spec {
        DomainSpec::Ball { center, radius } => {
            json!({"shape": "ball", "center": [center.x, center.y], "radius": radius})
        }
        DomainSpec::Stadium {
            centers: (a, b),
            radius,
        } => {
            json!({"shape": "stadium", "centers": [[a.x, a.y], [b.x, b.y]], "radius": radius})
        }
        DomainSpec::Square { center, half_side } => {
            json!({"shape": "square", "center": [center.x, center.y], "half_side": half_side})
        }
        DomainSpec::SEps { eps } => json!({"shape": "s_eps", "eps": eps}),
    }
}

/// Solve summary as written to reports. The wall time is left out unless
/// asked for, so that reruns give identical files.
pub fn solve_json(report: &SolveReport, timing: bool) -> Value {
    json!({
        "iterations": report.iterations,
        "final_update": report.final_update,
        "tol_iter": report.tol_iter,
        "residual_max": report.residual_max,
        "pair_solves": report.pair_solves,
        "wall_time_s": if timing { json!(report.wall_time) } else { Value::Null },
    })
}

/// Pairs drawn by [`convexity_json`].
pub const CONVEXITY_PAIRS: usize = 2000;

/// Seeded midpoint convexity test of the boundary.
pub fn convexity_json(domain: &Domain, seed: u64) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let violations = domain.convexity_violations(CONVEXITY_PAIRS, 1e-9, &mut rng);
    json!({"seed": seed, "pairs": CONVEXITY_PAIRS, "violations": violations})
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeValue {
    pub at: [f64; 2],
    pub value: f64,
}

/// A solved potential and where it was probed.
#[derive(Debug, Clone)]
pub struct PotentialRun {
    pub domain: Domain,
    pub grid: Grid,
    pub stencil: StencilSet,
    pub field: Field,
    pub report: SolveReport,
    pub probe: Option<ProbeValue>,
}

pub fn run_potential(
    spec: DomainSpec,
    disc: Discretization,
    probe: Option<Point2>,
) -> Result<PotentialRun, ExperimentError> {
    let domain = Domain::build(spec)?;
    let (grid, stencil) = build_grid(&domain, disc.h, disc.k)?;
    let max_sweeps = disc.max_sweeps.unwrap_or_else(|| default_max_sweeps(&grid));
    let pot = potential_on(grid, stencil, disc.tol_iter, max_sweeps)?;
    let probe = probe.or_else(|| default_probe(&spec)).map(|p| ProbeValue {
        at: [p.x, p.y],
        value: pot.value_at(p),
    });
    Ok(PotentialRun {
        domain,
        grid: pot.grid,
        stencil: pot.stencil,
        field: pot.field,
        report: pot.report,
        probe,
    })
}

impl PotentialRun {
    pub fn report_json(&self, disc: Discretization, timing: bool) -> Value {
        json!({
            "command": "potential",
            "domain": spec_json(&self.domain.spec),
            "h": disc.h,
            "k": disc.k,
            "lambda": self.domain.lambda(),
            "interior_nodes": self.grid.interior_count(),
            "ridge_nodes": self.grid.ridge_nodes().count(),
            "solve": solve_json(&self.report, timing),
            "probe": self.probe,
        })
    }
}

/// An eigenfunction check of one candidate field.
#[derive(Debug, Clone)]
pub struct EigenRun {
    pub domain: Domain,
    pub grid: Grid,
    pub stencil: StencilSet,
    pub candidate: Candidate,
    pub field: Field,
    pub solve: Option<SolveReport>,
    pub residuals: Residuals,
    pub report: EigenReport,
    pub rayleigh: f64,
    pub probe: Option<ProbeValue>,
}

pub fn run_eigencheck(
    spec: DomainSpec,
    disc: Discretization,
    candidate: Candidate,
    probe: Option<Point2>,
) -> Result<EigenRun, ExperimentError> {
    let (domain, grid, stencil, field, solve) = match candidate {
        Candidate::Delta => {
            let domain = Domain::build(spec)?;
            let (grid, stencil) = build_grid(&domain, disc.h, disc.k)?;
            let field = Field::delta(&grid);
            (domain, grid, stencil, field, None)
        }
        Candidate::Potential => {
            let run = run_potential(spec, disc, None)?;
            (
                run.domain,
                run.grid,
                run.stencil,
                run.field,
                Some(run.report),
            )
        }
    };
    let lambda = domain.lambda();
    let tol = Tolerances::for_lambda(lambda, disc.tol_iter);
    let residuals = eigen_residuals(&grid, &stencil, &field, lambda, tol.u_floor)?;
    let report = verdict_from(&grid, &residuals, lambda, &tol);
    let rayleigh = rayleigh_quotient(&grid, &stencil, &field)?;
    let probe = probe.or_else(|| default_probe(&spec)).map(|p| ProbeValue {
        at: [p.x, p.y],
        value: field.values[grid.nearest_node(p)],
    });
    Ok(EigenRun {
        domain,
        grid,
        stencil,
        candidate,
        field,
        solve,
        residuals,
        report,
        rayleigh,
        probe,
    })
}

impl EigenRun {
    pub fn report_json(&self, disc: Discretization, timing: bool) -> Value {
        let mut out = json!({
            "command": "eigencheck",
            "domain": spec_json(&self.domain.spec),
            "h": disc.h,
            "k": disc.k,
            "candidate": self.candidate.label(),
            "rayleigh_quotient": self.rayleigh,
            "probe": self.probe,
            "solve": self.solve.as_ref().map(|r| solve_json(r, timing)),
        });
        let eigen = serde_json::to_value(&self.report).expect("report serializes");
        if let (Value::Object(out), Value::Object(eigen)) = (&mut out, eigen) {
            out.extend(eigen);
        }
        out
    }
}

/// One `(ε, h)` run of the sweep. Failed runs keep the error text.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    pub h: f64,
    pub v_at_1_0: f64,
    pub verdict: Option<Verdict>,
    pub max_a: f64,
    pub max_b: f64,
    pub iterations: usize,
    pub error: Option<String>,
}

/// Potential and eigenfunction check on `S_ε` for every pair of `eps` and
/// `hs`. A failing run is recorded and the sweep goes on.
pub fn run_sweep(
    eps: &[f64],
    hs: &[f64],
    k: usize,
    tol_iter: f64,
    max_sweeps: Option<usize>,
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &e in eps {
        for &h in hs {
            let disc = Discretization {
                h,
                k,
                tol_iter,
                max_sweeps,
            };
            let row = match run_eigencheck(
                DomainSpec::SEps { eps: e },
                disc,
                Candidate::Potential,
                None,
            ) {
                Ok(run) => SweepRow {
                    eps: e,
                    h,
                    v_at_1_0: run.probe.map_or(f64::NAN, |p| p.value),
                    verdict: Some(run.report.verdict),
                    max_a: run.report.max_a.as_ref().map_or(f64::NAN, |m| m.value),
                    max_b: run.report.max_b.as_ref().map_or(f64::NAN, |m| m.value),
                    iterations: run.solve.as_ref().map_or(0, |s| s.iterations),
                    error: None,
                },
                Err(err) => {
                    let iterations = match &err {
                        ExperimentError::Solve(SolveError::NonConvergence(p)) => {
                            p.report.iterations
                        }
                        _ => 0,
                    };
                    SweepRow {
                        eps: e,
                        h,
                        v_at_1_0: f64::NAN,
                        verdict: None,
                        max_a: f64::NAN,
                        max_b: f64::NAN,
                        iterations,
                        error: Some(err.to_string()),
                    }
                }
            };
            rows.push(row);
        }
    }
    rows
}

pub const SWEEP_HEADER: &str = "eps,h,v_at_1_0,verdict,max_a,max_b,iterations";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            sig9(r.eps),
            sig9(r.h),
            sig9(r.v_at_1_0),
            r.verdict.map_or("error", Verdict::label),
            sig9(r.max_a),
            sig9(r.max_b),
            r.iterations
        )?;
    }
    Ok(())
}

/// Extrapolated limit of a sequence computed on a geometric sequence of
/// grid sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Richardson {
    pub limit: f64,
    /// Empirical order; `None` when the differences do not shrink
    /// geometrically, in which case first order is assumed.
    pub order: Option<f64>,
}

/// Richardson extrapolation from the last three (or two) values, computed at
/// grid sizes `hs` with a constant refinement ratio.
pub fn richardson(hs: &[f64], values: &[f64]) -> Option<Richardson> {
    let n = hs.len().min(values.len());
    if n < 2 {
        return None;
    }
    let ratio = hs[n - 2] / hs[n - 1];
    if !(ratio > 1.0) {
        return None;
    }
    let (v2, v3) = (values[n - 2], values[n - 1]);
    let order = if n >= 3 {
        let q = (values[n - 3] - v2) / (v2 - v3);
        let p = q.ln() / ratio.ln();
        (q > 0.0 && p.is_finite() && p > 0.0).then_some(p)
    } else {
        None
    };
    let p = order.unwrap_or(1.0);
    let limit = if v3 == v2 {
        v3
    } else {
        v3 + (v3 - v2) / (ratio.powf(p) - 1.0)
    };
    Some(Richardson { limit, order })
}

/// One grid of a refinement study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub probe: f64,
    /// Closed-form value at the probe, when the shape has one.
    pub probe_error: Option<f64>,
    /// Largest deviation from the closed form over interior nodes.
    pub sup_error: Option<f64>,
    pub residual_max: f64,
    pub iterations: usize,
}

/// Closed-form potential, `δ / inradius`, on the shapes where it is known.
pub fn exact_potential(domain: &Domain) -> Option<impl Fn(Point2) -> f64 + '_> {
    match domain.spec {
        DomainSpec::SEps { eps } if eps > 0.0 => None,
        DomainSpec::Ball { .. } | DomainSpec::Stadium { .. } | DomainSpec::SEps { .. } => {
            let r = domain.inradius();
            Some(move |p| domain.delta(p) / r)
        }
        DomainSpec::Square { .. } => None,
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub spec: DomainSpec,
    pub probe: Point2,
    pub rows: Vec<ConvergenceRow>,
    pub richardson: Option<Richardson>,
}

/// Potentials on a decreasing sequence of grid sizes at fixed `k`.
pub fn run_convergence(
    spec: DomainSpec,
    hs: &[f64],
    k: usize,
    tol_iter: f64,
    max_sweeps: Option<usize>,
    probe: Point2,
) -> Result<ConvergenceStudy, ExperimentError> {
    check_decreasing(hs)?;
    let mut rows = Vec::new();
    for &h in hs {
        let run = run_potential(
            spec,
            Discretization {
                h,
                k,
                tol_iter,
                max_sweeps,
            },
            Some(probe),
        )?;
        let exact = exact_potential(&run.domain);
        let value = run.probe.map_or(f64::NAN, |p| p.value);
        let probe_error = exact
            .as_ref()
            .map(|f| (value - f(run.grid.point(run.grid.nearest_node(probe)))).abs());
        let sup_error = exact.as_ref().map(|f| {
            run.grid
                .interior_nodes()
                .map(|n| (run.field.values[n] - f(run.grid.point(n))).abs())
                .fold(0.0, f64::max)
        });
        rows.push(ConvergenceRow {
            h,
            probe: value,
            probe_error,
            sup_error,
            residual_max: run.report.residual_max,
            iterations: run.report.iterations,
        });
    }
    let values: Vec<f64> = rows.iter().map(|r| r.probe).collect();
    Ok(ConvergenceStudy {
        spec,
        probe,
        richardson: richardson(hs, &values),
        rows,
    })
}

fn check_decreasing(hs: &[f64]) -> Result<(), ExperimentError> {
    if hs.is_empty() || hs.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(ExperimentError::Invalid(format!(
            "grid sizes must be strictly decreasing, got {hs:?}"
        )));
    }
    Ok(())
}

pub const CONVERGENCE_HEADER: &str = "h,probe,probe_error,sup_error,residual_max,iterations";

impl ConvergenceStudy {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CONVERGENCE_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                sig9(r.h),
                sig9(r.probe),
                sig9(r.probe_error.unwrap_or(f64::NAN)),
                sig9(r.sup_error.unwrap_or(f64::NAN)),
                sig9(r.residual_max),
                r.iterations
            )?;
        }
        Ok(())
    }

    pub fn report_json(&self, k: usize) -> Value {
        json!({
            "command": "convergence",
            "domain": spec_json(&self.spec),
            "k": k,
            "probe_at": [self.probe.x, self.probe.y],
            "rows": self.rows,
            "richardson": self.richardson,
        })
    }
}

/// The function `x^{4/3} − y^{4/3}`, infinity-harmonic away from the axes.
pub fn aronsson(p: Point2) -> f64 {
    p.x.powf(4.0 / 3.0) - p.y.powf(4.0 / 3.0)
}

/// Largest |D∞| of the Aronsson function over the interior nodes of the
/// square `[1, 2]²` whose arms stay inside the square, with the exact
/// function as boundary datum.
pub fn aronsson_residual(h: f64, k: usize) -> Result<f64, ExperimentError> {
    let domain = Domain::build(DomainSpec::Square {
        center: Point2::new(1.5, 1.5),
        half_side: 0.5,
    })?;
    let (grid, stencil) = build_grid(&domain, h, k)?;
    let field = Field::from_fn(&grid, aronsson);
    let boundary = stencil.boundary_values(aronsson);
    Ok(grid
        .interior_nodes()
        .filter(|&n| stencil.all_full(n))
        .map(|n| discrete_inf_laplacian(&stencil, &field, &boundary, n).abs())
        .fold(0.0, f64::max))
}

/// Dirichlet solve with the Aronsson function as boundary datum; returns the
/// largest nodal error.
pub fn aronsson_solve_error(h: f64, k: usize, tol_iter: f64) -> Result<f64, ExperimentError> {
    let domain = Domain::build(DomainSpec::Square {
        center: Point2::new(1.5, 1.5),
        half_side: 0.5,
    })?;
    let (grid, stencil) = build_grid(&domain, h, k)?;
    let problem = BVProblem::new(&grid, &stencil, aronsson, Vec::new())?;
    let (field, _) = solve_dirichlet_fast(&problem, tol_iter, default_max_sweeps(&grid))?;
    Ok(grid
        .interior_nodes()
        .map(|n| (field.values[n] - aronsson(grid.point(n))).abs())
        .fold(0.0, f64::max))
}

/// Writes `value` as indented JSON with numbers rounded to 9 digits.
pub fn write_json(path: &Path, value: &Value) -> io::Result<()> {
    let mut v = value.clone();
    round_json(&mut v);
    let mut text = serde_json::to_string_pretty(&v).expect("json serializes");
    text.push('\n');
    fs::write(path, text)
}

/// Creates `path` and hands a buffered writer to `write`, flushing after.
pub fn write_file(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
) -> io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write(&mut out)?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn richardson_recovers_first_and_second_order() {
        let hs = [0.04, 0.02, 0.01];
        let lin: Vec<f64> = hs.iter().map(|h| 0.3 + 2.0 * h).collect();
        let r = richardson(&hs, &lin).unwrap();
        assert!((r.limit - 0.3).abs() < 1e-12);
        assert!((r.order.unwrap() - 1.0).abs() < 1e-9);
        let quad: Vec<f64> = hs.iter().map(|h| 0.3 - 5.0 * h * h).collect();
        let r = richardson(&hs, &quad).unwrap();
        assert!((r.limit - 0.3).abs() < 1e-12);
        assert!((r.order.unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn richardson_falls_back_to_first_order() {
        let r = richardson(&[0.04, 0.02, 0.01], &[0.2, 0.25, 0.22]).unwrap();
        assert_eq!(r.order, None);
        assert!((r.limit - 0.19).abs() < 1e-12);
        let r = richardson(&[0.02, 0.01], &[1.0, 1.0]).unwrap();
        assert_eq!(r.limit, 1.0);
        assert!(richardson(&[0.01], &[1.0]).is_none());
        assert!(richardson(&[0.01, 0.02], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = vec![
            SweepRow {
                eps: 0.1,
                h: 0.04,
                v_at_1_0: 0.2154546103715792,
                verdict: Some(Verdict::Fail),
                max_a: 0.13,
                max_b: 0.0,
                iterations: 3,
                error: None,
            },
            SweepRow {
                eps: 0.2,
                h: 0.04,
                v_at_1_0: f64::NAN,
                verdict: None,
                max_a: f64::NAN,
                max_b: f64::NAN,
                iterations: 7,
                error: Some("boom".into()),
            },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "eps,h,v_at_1_0,verdict,max_a,max_b,iterations\n\
             0.1,0.04,0.21545461,fail,0.13,0,3\n\
             0.2,0.04,nan,error,nan,nan,7\n"
        );
    }

    #[test]
    fn ball_potential_run_and_report() {
        let disc = Discretization::new(0.05, 4, 1e-9);
        let run =
            run_potential(DomainSpec::unit_ball(), disc, Some(Point2::new(0.5, 0.0))).unwrap();
        let probe = run.probe.unwrap();
        assert!((probe.value - 0.5).abs() <= 3.0 * disc.h);
        let rep = run.report_json(disc, false);
        assert_eq!(rep["command"], "potential");
        assert_eq!(rep["solve"]["wall_time_s"], Value::Null);
        assert!(rep["solve"]["iterations"].as_u64().unwrap() >= 1);
    }

    #[test]
    fn eigencheck_report_has_flat_eigen_fields() {
        let disc = Discretization::new(0.05, 4, 1e-9);
        let run = run_eigencheck(DomainSpec::unit_square(), disc, Candidate::Delta, None).unwrap();
        let rep = run.report_json(disc, false);
        for key in [
            "lambda",
            "max_a",
            "max_b",
            "strict_region_nodes",
            "verdict",
            "reasons",
            "tolerances",
        ] {
            assert!(rep.get(key).is_some(), "missing {key}");
        }
        assert_eq!(rep["verdict"], "fail");
        assert_eq!(rep["reasons"][0]["reason"], "strict-supersolution-region");
        assert_eq!(rep["solve"], Value::Null);
    }

    #[test]
    fn convergence_needs_decreasing_sizes() {
        let err = run_convergence(
            DomainSpec::unit_ball(),
            &[0.05, 0.1],
            3,
            1e-9,
            None,
            Point2::new(0.5, 0.0),
        );
        assert!(matches!(err, Err(ExperimentError::Invalid(_))));
    }

    #[test]
    fn exact_potential_only_where_known() {
        let ball = Domain::build(DomainSpec::Ball {
            center: Point2::new(0.0, 0.0),
            radius: 2.0,
        })
        .unwrap();
        let f = exact_potential(&ball).unwrap();
        assert!((f(Point2::new(1.0, 0.0)) - 0.5).abs() < 1e-12);
        let sq = Domain::build(DomainSpec::unit_square()).unwrap();
        assert!(exact_potential(&sq).is_none());
        let s = Domain::build(DomainSpec::SEps { eps: 0.1 }).unwrap();
        assert!(exact_potential(&s).is_none());
    }
}
