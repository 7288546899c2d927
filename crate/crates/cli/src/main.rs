use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use inflap::experiment::{
    self, aronsson_residual, aronsson_solve_error, convexity_json, richardson, run_convergence,
    run_eigencheck, run_potential, run_sweep, write_file, write_json, write_sweep_csv, Candidate,
    Discretization, ExperimentError,
};
use inflap::output::sig9;
use inflap::solver::{SolveError, DEFAULT_K, DEFAULT_TOL_ITER};
use inflap::{DomainSpec, Point2};

#[derive(Parser, Debug)]
#[command(
    name = "inflap",
    version,
    about = "Infinity-harmonic potentials and eigenfunction checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for the potential and write field.csv and report.json.
    Potential(Common),
    /// Check a candidate field against the eigenfunction equation.
    Eigencheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "potential")]
        candidate: CandidateArg,
    },
    /// Potentials and checks on S_eps for every listed eps and h.
    Sweep(Common),
    /// Refinement study over a decreasing list of h.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "potential")]
        study: Study,
    },
}

#[derive(clap::Args, Debug)]
struct Common {
    #[arg(long, value_enum, default_value = "s_eps")]
    domain: Shape,
    /// Comma-separated for `sweep`.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 1.0)]
    half_side: f64,
    /// Grid spacing; comma-separated for `sweep` and `convergence`.
    #[arg(long, value_delimiter = ',', default_value = "0.02")]
    h: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_TOL_ITER)]
    tol: f64,
    /// Sweep budget; defaults to 200·(nx + ny).
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long, value_parser = parse_point)]
    probe: Option<Point2>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record wall-clock times in report.json.
    #[arg(long)]
    timing: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Shape {
    Ball,
    Stadium,
    Square,
    #[value(name = "s_eps")]
    SEps,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CandidateArg {
    Delta,
    Potential,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Study {
    Potential,
    Aronsson,
}

fn parse_point(s: &str) -> Result<Point2, String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [x, y] => {
            let x: f64 = x.trim().parse().map_err(|e| format!("bad x: {e}"))?;
            let y: f64 = y.trim().parse().map_err(|e| format!("bad y: {e}"))?;
            Ok(Point2::new(x, y))
        }
        _ => Err(format!("expected X,Y, got {s:?}")),
    }
}

enum Failure {
    Validation(String),
    NonConvergence {
        message: String,
        iterations: usize,
        final_update: f64,
    },
    Other(String),
}

impl From<ExperimentError> for Failure {
    fn from(err: ExperimentError) -> Self {
        match err {
            ExperimentError::Solve(SolveError::NonConvergence(p)) => Failure::NonConvergence {
                message: format!(
                    "solver did not converge after {} sweeps",
                    p.report.iterations
                ),
                iterations: p.report.iterations,
                final_update: p.report.final_update,
            },
            ExperimentError::Io(e) => Failure::Other(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::Other(err.to_string())
    }
}

impl Common {
    fn single<T: Copy + std::fmt::Debug>(values: &[T], name: &str) -> Result<T, Failure> {
        match values {
            [v] => Ok(*v),
            _ => Err(Failure::Validation(format!(
                "--{name} takes one value here, got {values:?}"
            ))),
        }
    }

    fn spec(&self) -> Result<DomainSpec, Failure> {
        Ok(match self.domain {
            Shape::Ball => DomainSpec::Ball {
                center: Point2::new(0.0, 0.0),
                radius: self.radius,
            },
            Shape::Stadium => DomainSpec::Stadium {
                centers: (Point2::new(-1.0, 0.0), Point2::new(1.0, 0.0)),
                radius: self.radius,
            },
            Shape::Square => DomainSpec::Square {
                center: Point2::new(0.0, 0.0),
                half_side: self.half_side,
            },
            Shape::SEps => DomainSpec::SEps {
                eps: Self::single(&self.eps, "eps")?,
            },
        })
    }

    fn disc(&self) -> Result<Discretization, Failure> {
        Ok(Discretization {
            h: Self::single(&self.h, "h")?,
            k: self.k,
            tol_iter: self.tol,
            max_sweeps: self.max_sweeps,
        })
    }

    fn prepare_out(&self) -> Result<(), Failure> {
        fs::create_dir_all(&self.out)?;
        Ok(())
    }
}

fn print_probe(probe: Option<experiment::ProbeValue>) {
    if let Some(p) = probe {
        println!("v({},{}) = {}", sig9(p.at[0]), sig9(p.at[1]), sig9(p.value));
    }
}

fn potential(c: &Common) -> Result<(), Failure> {
    let (spec, disc) = (c.spec()?, c.disc()?);
    let run = run_potential(spec, disc, c.probe)?;
    c.prepare_out()?;
    write_file(&c.out.join("field.csv"), |w| {
        run.grid.write_field_csv(&run.field, w)
    })?;
    let mut report = run.report_json(disc, c.timing);
    report["convexity"] = convexity_json(&run.domain, c.seed);
    write_json(&c.out.join("report.json"), &report)?;
    print_probe(run.probe);
    Ok(())
}

fn eigencheck(c: &Common, candidate: CandidateArg) -> Result<(), Failure> {
    let (spec, disc) = (c.spec()?, c.disc()?);
    let candidate = match candidate {
        CandidateArg::Delta => Candidate::Delta,
        CandidateArg::Potential => Candidate::Potential,
    };
    let run = run_eigencheck(spec, disc, candidate, c.probe)?;
    c.prepare_out()?;
    write_file(&c.out.join("field.csv"), |w| {
        run.grid.write_field_csv(&run.field, w)
    })?;
    write_file(&c.out.join("residuals.csv"), |w| {
        run.residuals.write_csv(&run.grid, w)
    })?;
    let mut report = run.report_json(disc, c.timing);
    report["convexity"] = convexity_json(&run.domain, c.seed);
    write_json(&c.out.join("report.json"), &report)?;
    print_probe(run.probe);
    println!("verdict: {}", run.report.verdict.label());
    for r in &run.report.reasons {
        println!(
            "  {}",
            serde_json::to_value(r.reason)
                .unwrap_or_default()
                .as_str()
                .unwrap_or("")
        );
    }
    Ok(())
}

fn sweep(c: &Common) -> Result<(), Failure> {
    if !matches!(c.domain, Shape::SEps) {
        return Err(Failure::Validation(
            "sweep runs on --domain s_eps only".into(),
        ));
    }
    if c.eps.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(Failure::Validation(format!(
            "every eps must be >= 0, got {:?}",
            c.eps
        )));
    }
    let rows = run_sweep(&c.eps, &c.h, c.k, c.tol, c.max_sweeps);
    c.prepare_out()?;
    write_file(&c.out.join("sweep.csv"), |w| write_sweep_csv(&rows, w))?;
    let per_eps: Vec<_> = c
        .eps
        .iter()
        .map(|&e| {
            let mine: Vec<_> = rows
                .iter()
                .filter(|r| r.eps == e && r.error.is_none())
                .collect();
            let hs: Vec<f64> = mine.iter().map(|r| r.h).collect();
            let vs: Vec<f64> = mine.iter().map(|r| r.v_at_1_0).collect();
            json!({"eps": e, "richardson": richardson(&hs, &vs)})
        })
        .collect();
    let gap = rows
        .iter()
        .filter(|r| r.eps > 0.0 && r.error.is_none())
        .map(|r| 1.0 - r.v_at_1_0)
        .fold(f64::INFINITY, f64::min);
    let failures: Vec<_> = rows
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| json!({"eps": r.eps, "h": r.h, "error": e}))
        })
        .collect();
    let report = json!({
        "command": "sweep",
        "domain": "s_eps",
        "k": c.k,
        "tol_iter": c.tol,
        "eps": c.eps,
        "h": c.h,
        "gap": if gap.is_finite() { json!(gap) } else { serde_json::Value::Null },
        "extrapolation": per_eps,
        "failed_rows": failures,
        "seed": c.seed,
    });
    write_json(&c.out.join("report.json"), &report)?;
    for r in &rows {
        println!(
            "eps {} h {}: v(1,0) = {} ({})",
            sig9(r.eps),
            sig9(r.h),
            sig9(r.v_at_1_0),
            r.verdict.map_or("error", |v| v.label())
        );
    }
    Ok(())
}

fn convergence(c: &Common, study: Study) -> Result<(), Failure> {
    c.prepare_out()?;
    match study {
        Study::Potential => {
            let spec = c.spec()?;
            let probe = c
                .probe
                .or_else(|| experiment::default_probe(&spec))
                .unwrap_or(Point2::new(0.5, 0.0));
            let study = run_convergence(spec, &c.h, c.k, c.tol, c.max_sweeps, probe)?;
            write_file(&c.out.join("convergence.csv"), |w| study.write_csv(w))?;
            let mut report = study.report_json(c.k);
            report["seed"] = json!(c.seed);
            write_json(&c.out.join("report.json"), &report)?;
            for r in &study.rows {
                println!("h {}: probe {}", sig9(r.h), sig9(r.probe));
            }
            if let Some(r) = study.richardson {
                let order = r
                    .order
                    .map_or("n/a (first order assumed)".to_string(), sig9);
                println!("extrapolated {} order {}", sig9(r.limit), order);
            }
        }
        Study::Aronsson => {
            if c.h.windows(2).any(|w| !(w[1] < w[0])) || c.h.is_empty() {
                return Err(Failure::Validation(format!(
                    "h must be strictly decreasing, got {:?}",
                    c.h
                )));
            }
            let mut rows = Vec::new();
            let mut text = String::from("h,max_operator,solve_error\n");
            for &h in &c.h {
                let op = aronsson_residual(h, c.k)?;
                let err = aronsson_solve_error(h, c.k, c.tol)?;
                text.push_str(&format!("{},{},{}\n", sig9(h), sig9(op), sig9(err)));
                println!(
                    "h {}: max |D| {} solve error {}",
                    sig9(h),
                    sig9(op),
                    sig9(err)
                );
                rows.push(json!({"h": h, "max_operator": op, "solve_error": err}));
            }
            fs::write(c.out.join("convergence.csv"), text)?;
            let report = json!({"command": "convergence", "study": "aronsson", "k": c.k, "rows": rows, "seed": c.seed});
            write_json(&c.out.join("report.json"), &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Potential(c) => potential(c),
        Command::Eigencheck { common, candidate } => eigencheck(common, *candidate),
        Command::Sweep(c) => sweep(c),
        Command::Convergence { common, study } => convergence(common, *study),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(message)) => {
            eprintln!("{}", json!({"error": "validation", "message": message}));
            ExitCode::from(2)
        }
        Err(Failure::NonConvergence {
            message,
            iterations,
            final_update,
        }) => {
            eprintln!(
                "{}",
                json!({
                    "error": "non-convergence",
                    "message": message,
                    "iterations": iterations,
                    "final_update": final_update,
                })
            );
            ExitCode::from(3)
        }
        Err(Failure::Other(message)) => {
            eprintln!("{}", json!({"error": "io", "message": message}));
            ExitCode::from(1)
        }
    }
}
