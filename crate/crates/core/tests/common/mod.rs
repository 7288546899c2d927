#![allow(dead_code)]

use inflap::eigen::{eigen_residuals, rayleigh_quotient, Tolerances};
use inflap::experiment::{run_eigencheck, Candidate, Discretization};
use inflap::grid::{build_grid, Field};
use inflap::solver::{solve_dirichlet, solve_dirichlet_fast, BVProblem, SolveError};
use inflap::{eigen_verdict, Domain, DomainSpec, Grid, Point2, SolveReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn all_specs() -> Vec<DomainSpec> {
    vec![
        DomainSpec::unit_ball(),
        DomainSpec::unit_stadium(),
        DomainSpec::unit_square(),
        DomainSpec::SEps { eps: 0.1 },
        DomainSpec::SEps { eps: 0.25 },
    ]
}

pub fn random_interior(domain: &Domain, rng: &mut ChaCha8Rng) -> Point2 {
    let (lo, hi) = domain.bbox;
    loop {
        let p = Point2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
        if domain.contains(p) && domain.delta(p) > 0.0 {
            return p;
        }
    }
}

// Boundary oracle built from the primitive shapes alone: sample every circle
// and segment, keep the samples that are not strictly inside another piece.
pub struct Sampled {
    pub points: Vec<Point2>,
    pub spacing: f64,
}

enum Prim {
    Disk(Point2, f64),
    // Convex polygon, counter-clockwise.
    Poly(Vec<Point2>),
}

impl Prim {
    fn strictly_inside(&self, p: Point2, slack: f64) -> bool {
        match self {
            Prim::Disk(c, r) => p.dist(*c) < r - slack,
            Prim::Poly(v) => (0..v.len()).all(|i| {
                let a = v[i];
                let b = v[(i + 1) % v.len()];
                let e = Point2::new(b.x - a.x, b.y - a.y);
                (e.x * (p.y - a.y) - e.y * (p.x - a.x)) / e.norm() > slack
            }),
        }
    }

    fn perimeter(&self) -> f64 {
        match self {
            Prim::Disk(_, r) => 2.0 * std::f64::consts::PI * r,
            Prim::Poly(v) => (0..v.len()).map(|i| v[i].dist(v[(i + 1) % v.len()])).sum(),
        }
    }

    fn sample(&self, spacing: f64, out: &mut Vec<Point2>) {
        match self {
            Prim::Disk(c, r) => {
                let n = (self.perimeter() / spacing).ceil() as usize;
                for i in 0..n {
                    let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    out.push(Point2::new(c.x + r * t.cos(), c.y + r * t.sin()));
                }
            }
            Prim::Poly(v) => {
                for i in 0..v.len() {
                    let a = v[i];
                    let b = v[(i + 1) % v.len()];
                    let n = (a.dist(b) / spacing).ceil() as usize;
                    for s in 0..n {
                        let t = s as f64 / n as f64;
                        out.push(Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
                    }
                }
            }
        }
    }
}

fn primitives(spec: DomainSpec) -> Vec<Prim> {
    let p = Point2::new;
    match spec {
        DomainSpec::Ball { center, radius } => vec![Prim::Disk(center, radius)],
        DomainSpec::Stadium {
            centers: (a, b),
            radius,
        } => {
            let d = Point2::new(b.x - a.x, b.y - a.y);
            let n = Point2::new(-d.y / d.norm() * radius, d.x / d.norm() * radius);
            vec![
                Prim::Disk(a, radius),
                Prim::Disk(b, radius),
                Prim::Poly(vec![
                    p(a.x - n.x, a.y - n.y),
                    p(b.x - n.x, b.y - n.y),
                    p(b.x + n.x, b.y + n.y),
                    p(a.x + n.x, a.y + n.y),
                ]),
            ]
        }
        DomainSpec::Square {
            center: c,
            half_side: s,
        } => vec![Prim::Poly(vec![
            p(c.x - s, c.y - s),
            p(c.x + s, c.y - s),
            p(c.x + s, c.y + s),
            p(c.x - s, c.y + s),
        ])],
        DomainSpec::SEps { eps } => vec![
            Prim::Disk(p(-1.0, 0.0), 1.0 + eps),
            Prim::Disk(p(1.0, 0.0), 1.0),
            Prim::Poly(vec![
                p(-1.0, -1.0 - eps),
                p(1.0, -1.0),
                p(1.0, 1.0),
                p(-1.0, 1.0 + eps),
            ]),
        ],
    }
}

pub fn sampled_boundary(spec: DomainSpec, total: usize) -> Sampled {
    let prims = primitives(spec);
    let length: f64 = prims.iter().map(Prim::perimeter).sum();
    let spacing = length / total as f64;
    let mut points = Vec::new();
    for (i, prim) in prims.iter().enumerate() {
        let mut raw = Vec::new();
        prim.sample(spacing, &mut raw);
        points.extend(raw.into_iter().filter(|&q| {
            prims
                .iter()
                .enumerate()
                .all(|(j, other)| i == j || !other.strictly_inside(q, 1e-12))
        }));
    }
    Sampled { points, spacing }
}

/// Largest |δ_exact − δ_sampled| over 1000 random interior points per
/// domain, against 10⁵ boundary samples; must stay within 2 spacings.
pub fn check_exact_vs_sampled() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut notes = Vec::new();
    for spec in all_specs() {
        let domain = Domain::build(spec).unwrap();
        let oracle = sampled_boundary(spec, 100_000);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = random_interior(&domain, &mut rng);
            let sampled = oracle
                .points
                .iter()
                .map(|q| p.dist(*q))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max((domain.delta(p) - sampled).abs());
        }
        if worst > 2.0 * oracle.spacing {
            return Err(format!(
                "{}: |exact - sampled| {worst:.3e} > {:.3e}",
                spec.shape_name(),
                2.0 * oracle.spacing
            ));
        }
        notes.push(format!("{} {worst:.1e}", spec.shape_name()));
    }
    Ok(format!("delta vs sampled: {}", notes.join(", ")))
}

pub fn check_lipschitz() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for spec in all_specs() {
        let domain = Domain::build(spec).unwrap();
        for _ in 0..10_000 {
            let (p, q) = (
                random_interior(&domain, &mut rng),
                random_interior(&domain, &mut rng),
            );
            if (domain.delta(p) - domain.delta(q)).abs() > p.dist(q) + 1e-12 {
                return Err(format!(
                    "{}: not 1-Lipschitz at {p:?}, {q:?}",
                    spec.shape_name()
                ));
            }
        }
    }
    Ok("delta 1-Lipschitz on 10^4 pairs per domain".into())
}

/// A smooth random function on the plane.
pub fn random_datum(rng: &mut ChaCha8Rng) -> impl Fn(Point2) -> f64 {
    let c: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    move |p: Point2| {
        c[0] + c[1] * p.x + c[2] * p.y + c[3] * (2.0 * p.x + c[4]).sin() * (1.5 * p.y + c[5]).cos()
    }
}

/// 20 random pairs g₁ ≤ g₂ with fixed values ordered on the same nodes;
/// the solutions must satisfy u₁ ≤ u₂ + tol.
pub fn check_comparison() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tol = 1e-10;
    let specs = [
        DomainSpec::unit_square(),
        DomainSpec::unit_ball(),
        DomainSpec::SEps { eps: 0.2 },
    ];
    let mut worst = f64::NEG_INFINITY;
    for case in 0..20 {
        let spec = specs[case % specs.len()];
        let domain = Domain::build(spec).unwrap();
        let (grid, stencil) = build_grid(&domain, 0.08, 4).unwrap();
        let g1 = random_datum(&mut rng);
        let bump = random_datum(&mut rng);
        let lift = rng.gen_range(0.0..0.5);
        let g2 = |p: Point2| g1(p) + lift + bump(p).abs();
        let interior: Vec<usize> = grid.interior_nodes().collect();
        let mut fixed1: Vec<(usize, f64)> = Vec::new();
        let mut fixed2 = Vec::new();
        for _ in 0..3 {
            let n = interior[rng.gen_range(0..interior.len())];
            let v = rng.gen_range(-2.0..2.0);
            let raise = rng.gen_range(0.0..1.0);
            if fixed1.iter().all(|&(m, _)| m != n) {
                fixed1.push((n, v));
                fixed2.push((n, v + raise));
            }
        }
        let p1 = BVProblem::new(&grid, &stencil, &g1, fixed1).unwrap();
        let p2 = BVProblem::new(&grid, &stencil, g2, fixed2).unwrap();
        let (u1, _) = solve_dirichlet_fast(&p1, tol, 100_000).map_err(|e| e.to_string())?;
        let (u2, _) = solve_dirichlet_fast(&p2, tol, 100_000).map_err(|e| e.to_string())?;
        for n in grid.interior_nodes() {
            let gap = u1.values[n] - u2.values[n];
            worst = worst.max(gap);
            if gap > tol {
                return Err(format!(
                    "case {case}: u1 - u2 = {gap:.3e} at {:?}",
                    grid.point(n)
                ));
            }
        }
    }
    Ok(format!("comparison on 20 pairs, max(u1 - u2) {worst:.1e}"))
}

pub type Solver = fn(&BVProblem<'_>, f64, usize) -> Result<(Field, SolveReport), SolveError>;

/// Solutions stay within the range of the boundary data and fixed values,
/// with no slack.
pub fn check_max_principle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let solvers: [Solver; 2] = [solve_dirichlet, solve_dirichlet_fast];
    for case in 0..10 {
        let spec = if case % 2 == 0 {
            DomainSpec::unit_ball()
        } else {
            DomainSpec::unit_stadium()
        };
        let domain = Domain::build(spec).unwrap();
        let (grid, stencil) = build_grid(&domain, 0.08, 4).unwrap();
        let g = random_datum(&mut rng);
        let interior: Vec<usize> = grid.interior_nodes().collect();
        let fixed = vec![(
            interior[rng.gen_range(0..interior.len())],
            rng.gen_range(-3.0..3.0),
        )];
        let problem = BVProblem::new(&grid, &stencil, g, fixed.clone()).unwrap();
        let data = problem
            .boundary
            .iter()
            .copied()
            .chain(fixed.iter().map(|f| f.1));
        let (lo, hi) = data.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
        for solve in solvers {
            let (u, _) = solve(&problem, 1e-10, 100_000).map_err(|e| e.to_string())?;
            for n in grid.interior_nodes() {
                if !(lo <= u.values[n] && u.values[n] <= hi) {
                    return Err(format!("case {case}: {} outside [{lo}, {hi}]", u.values[n]));
                }
            }
        }
    }
    Ok("max principle exact on 10 problems, both solvers".into())
}

/// Nonnegative fields vanishing outside the domain: powers of δ modulated by
/// a random positive factor, or the lower envelope of δ and random cones.
pub fn random_admissible(grid: &Grid, rng: &mut ChaCha8Rng) -> Field {
    let delta = Field::delta(grid);
    if rng.gen_bool(0.5) {
        let p = rng.gen_range(0.5..2.0);
        let amp = rng.gen_range(0.0..0.9);
        let (fx, fy, ph) = (
            rng.gen_range(0.5..4.0),
            rng.gen_range(0.5..4.0),
            rng.gen_range(0.0..6.3),
        );
        let mut f = Field::from_fn(grid, |q| amp * (fx * q.x + ph).sin() * (fy * q.y).cos());
        for n in 0..grid.len() {
            f.values[n] = delta.values[n].powf(p) * (1.0 + f.values[n]);
        }
        f
    } else {
        let tips: Vec<(Point2, f64)> = (0..3)
            .map(|_| (random_interior(grid.domain(), rng), rng.gen_range(0.5..2.0)))
            .collect();
        let mut f = Field::from_fn(grid, |q| {
            tips.iter()
                .map(|(c, s)| s * (1.0 - q.dist(*c)))
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0)
        });
        for n in 0..grid.len() {
            f.values[n] = f.values[n].min(delta.values[n]);
        }
        f
    }
}

/// rayleigh(f) ≥ 0.85·Λ on 20 random admissible fields at h = 0.02, k = 4.
pub fn check_rayleigh_bound() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let specs = [
        DomainSpec::unit_ball(),
        DomainSpec::unit_stadium(),
        DomainSpec::unit_square(),
        DomainSpec::SEps { eps: 0.1 },
    ];
    let mut lowest = f64::INFINITY;
    for case in 0..20 {
        let spec = specs[case % specs.len()];
        let domain = Domain::build(spec).unwrap();
        let (grid, stencil) = build_grid(&domain, 0.02, 4).unwrap();
        let f = random_admissible(&grid, &mut rng);
        let r = rayleigh_quotient(&grid, &stencil, &f).map_err(|e| e.to_string())?;
        let lambda = domain.lambda();
        lowest = lowest.min(r / lambda);
        if r < lambda - 0.15 * lambda {
            return Err(format!(
                "case {case} ({}): {r} < 0.85 * {lambda}",
                spec.shape_name()
            ));
        }
    }
    Ok(format!("rayleigh/lambda >= {lowest:.4} on 20 fields"))
}

/// f ↦ 2f leaves a, the verdict and the quotient unchanged and doubles b,
/// all bit for bit.
pub fn check_scale_invariance() -> Result<String, String> {
    let disc = Discretization::new(0.04, 4, 1e-9);
    let cases = [
        (DomainSpec::unit_ball(), Candidate::Delta),
        (DomainSpec::unit_square(), Candidate::Delta),
        (DomainSpec::unit_stadium(), Candidate::Potential),
        (DomainSpec::SEps { eps: 0.25 }, Candidate::Potential),
    ];
    for (spec, candidate) in cases {
        let name = spec.shape_name();
        let run = run_eigencheck(spec, disc, candidate, None).map_err(|e| e.to_string())?;
        let doubled = run.field.scaled(2.0);
        let lambda = run.domain.lambda();
        let tol = Tolerances::for_lambda(lambda, disc.tol_iter);
        let res = eigen_residuals(&run.grid, &run.stencil, &doubled, lambda, tol.u_floor)
            .map_err(|e| e.to_string())?;
        for n in 0..run.grid.len() {
            let (a1, a2) = (run.residuals.a[n], res.a[n]);
            if !(a1 == a2 || (a1.is_nan() && a2.is_nan())) {
                return Err(format!(
                    "{name}: a changed at {:?}: {a1} vs {a2}",
                    run.grid.point(n)
                ));
            }
            let (b1, b2) = (run.residuals.b[n], res.b[n]);
            if !(2.0 * b1 == b2 || (b1.is_nan() && b2.is_nan())) {
                return Err(format!(
                    "{name}: b not doubled at {:?}: {b1} vs {b2}",
                    run.grid.point(n)
                ));
            }
        }
        let report = eigen_verdict(&run.grid, &run.stencil, &doubled, lambda, &tol)
            .map_err(|e| e.to_string())?;
        if report.verdict != run.report.verdict {
            return Err(format!("{name}: verdict changed"));
        }
        let r2 = rayleigh_quotient(&run.grid, &run.stencil, &doubled).map_err(|e| e.to_string())?;
        if r2 != run.rayleigh {
            return Err(format!("{name}: quotient {} became {r2}", run.rayleigh));
        }
    }
    Ok("scale invariance exact on 4 cases".into())
}
