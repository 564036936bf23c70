use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hfgt::fixture::{self, Target};
use hfgt::{Error, SolveOptions, SolveStatus};

mod report;

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "hfgt", version, about = "Multi-operand network scheduling as a convex QP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct SolverArgs {
    /// Feasibility / optimality tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: u32,
    /// Skip the active-set polish after the interior-point solve.
    #[arg(long)]
    no_polish: bool,
    /// Print the solver's iteration log.
    #[arg(long, short)]
    verbose: bool,
}

impl SolverArgs {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            polish: !self.no_polish,
            verbose: self.verbose,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compile, solve and report one scenario.
    Run {
        model: PathBuf,
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Print the dimension report and stop.
        #[arg(long)]
        dims_only: bool,
        /// Also write the assembled QP matrices into this directory.
        #[arg(long, value_name = "DIR")]
        export_qp: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Parse and validate a model (and optionally a scenario) without solving.
    Check { model: PathBuf, scenario: Option<PathBuf> },
    /// Solve the bundled scenarios and compare against reference totals.
    Regress {
        /// Model to use instead of the bundled one.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Solve scenarios one after another.
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

/// Error carrying the process exit status.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let err = e.into();
        let code = match err.downcast_ref::<Error>() {
            Some(Error::Validation(_) | Error::Model(_) | Error::UndeclaredRatio { .. } | Error::NegativeCost(_)) => {
                EXIT_VALIDATION
            }
            Some(Error::Solver(_)) => EXIT_NOT_CONVERGED,
            _ => EXIT_FAILURE,
        };
        Failure { code, err }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Run {
            model,
            scenario,
            out,
            dims_only,
            export_qp,
            solver,
        } => run(&model, &scenario, &out, dims_only, export_qp.as_deref(), &solver.options()),
        Command::Check { model, scenario } => check(&model, scenario.as_deref()),
        Command::Regress {
            model,
            sequential,
            solver,
        } => regress(model.as_deref(), sequential, &solver.options()),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("hfgt: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Parse errors are reported against the file they came from.
fn located(path: &Path, e: Error) -> anyhow::Error {
    match e {
        Error::Validation(diags) => {
            for d in &diags {
                eprintln!("{}:{d}", path.display());
            }
            anyhow::Error::new(Error::Validation(diags)).context(format!("{} failed validation", path.display()))
        }
        e => anyhow::Error::new(e).context(path.display().to_string()),
    }
}

fn status_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Optimal => 0,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        SolveStatus::MaxIterations | SolveStatus::NotConverged => EXIT_NOT_CONVERGED,
    }
}

fn run(
    model_path: &Path,
    scenario_path: &Path,
    out: &Path,
    dims_only: bool,
    export_qp: Option<&Path>,
    opts: &SolveOptions,
) -> Result<u8, Failure> {
    let model = hfgt::load_model(&read(model_path)?).map_err(|e| located(model_path, e))?;
    let scenario = hfgt::parse_scenario(&read(scenario_path)?).map_err(|e| located(scenario_path, e))?;
    let program = hfgt::compile(&model, &scenario)?;
    if let Some(dir) = export_qp {
        hfgt::qp::export(&program, dir).with_context(|| format!("exporting QP to {}", dir.display()))?;
    }
    if dims_only {
        print!("{}", program.report.render());
        return Ok(0);
    }

    let t = Instant::now();
    let sol = hfgt::solve(&program.qp, opts)?;
    let verification = hfgt::verify(&program, &sol.x, opts.tol.max(1e-6));
    let ex = hfgt::extract(&program, &model, &sol.x);
    let rep = report::RunReport::new(&program, &scenario, &sol, &verification, &ex, t.elapsed().as_secs_f64());

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    report::write_atomic(&out.join("run_report.json"), &rep.to_json())?;

    let code = status_code(sol.status);
    if code != 0 {
        eprintln!("{}: solver status {:?}", scenario.id, sol.status);
        eprintln!("largest equality residual per constraint family:");
        for (name, r) in &verification.equality_blocks {
            eprintln!("  {name:<20}{r:.3e}");
        }
        return Ok(code);
    }

    report::write_atomic(&out.join("co2_by_resource.csv"), &report::co2_csv(&ex)?)?;
    for (op, file) in [("ch4", "gas_balance.csv"), ("h2", "hydrogen_balance.csv")] {
        if let Some(b) = ex.balances.iter().find(|b| b.operand == op) {
            report::write_atomic(&out.join(file), &report::balance_csv(b)?)?;
        }
    }
    report::write_atomic(&out.join("objective.txt"), &report::objective_txt(&sol, &ex))?;

    println!(
        "{}: {:?} in {} iterations, cost {:.2}, objective {:.2}, CO2 {:.2} t",
        scenario.id, sol.status, sol.iterations, ex.costs.capabilities_total, sol.objective, ex.total_emissions
    );
    if !verification.passed {
        eprintln!("warning: solution failed replay verification: {verification:?}");
    }
    Ok(0)
}

fn check(model_path: &Path, scenario_path: Option<&Path>) -> Result<u8, Failure> {
    let model = hfgt::load_model(&read(model_path)?).map_err(|e| located(model_path, e))?;
    println!(
        "{}: {} operands, {} resources, {} processes, {} capabilities",
        model_path.display(),
        model.operands.len(),
        model.resources.len(),
        model.processes.len(),
        model.capabilities.len()
    );
    if let Some(p) = scenario_path {
        let scenario = hfgt::parse_scenario(&read(p)?).map_err(|e| located(p, e))?;
        let program = hfgt::compile(&model, &scenario)?;
        print!("{}", program.report.render());
    }
    Ok(0)
}

struct Row {
    target: Target,
    status: SolveStatus,
    cost: f64,
    co2: f64,
    seconds: f64,
}

impl Row {
    fn golden_ok(&self) -> bool {
        let t = &self.target;
        fixture::within(self.cost, t.golden_cost, fixture::GOLDEN_REL_TOL, 0.0)
            && fixture::within(self.co2, t.golden_co2, fixture::GOLDEN_REL_TOL, fixture::CO2_ABS_TOL)
    }

    fn published_ok(&self) -> bool {
        let t = &self.target;
        fixture::within(self.cost, t.published_cost, fixture::PUBLISHED_REL_TOL, 0.0)
            && fixture::within(self.co2, t.published_co2, fixture::PUBLISHED_REL_TOL, fixture::CO2_ABS_TOL)
    }

    fn passed(&self) -> bool {
        self.status == SolveStatus::Optimal && self.golden_ok() && self.published_ok()
    }
}

fn solve_bundled(model: &hfgt::SystemModel, target: Target, opts: &SolveOptions) -> Result<Row, Failure> {
    let text = fixture::scenario(&target.id).with_context(|| format!("no bundled scenario {}", target.id))?;
    let scenario = hfgt::parse_scenario(text)?;
    let program = hfgt::compile(model, &scenario)?;
    let t = Instant::now();
    let sol = hfgt::solve(&program.qp, opts)?;
    let ex = hfgt::extract(&program, model, &sol.x);
    Ok(Row {
        target,
        status: sol.status,
        cost: ex.costs.capabilities_total,
        co2: ex.total_emissions,
        seconds: t.elapsed().as_secs_f64(),
    })
}

fn pct(v: f64, t: f64) -> String {
    if t == 0.0 {
        format!("{:+.2}t", v - t)
    } else {
        format!("{:+.3}%", 100.0 * (v / t - 1.0))
    }
}

fn regress(model_path: Option<&Path>, sequential: bool, opts: &SolveOptions) -> Result<u8, Failure> {
    let model = match model_path {
        Some(p) => hfgt::load_model(&read(p)?).map_err(|e| located(p, e))?,
        None => hfgt::load_model(fixture::MODEL)?,
    };
    let targets = fixture::targets();
    let rows: Vec<Result<Row, Failure>> = if sequential {
        targets.into_iter().map(|t| solve_bundled(&model, t, opts)).collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = targets
                .into_iter()
                .map(|t| s.spawn(|| solve_bundled(&model, t, opts)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
        })
    };
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;

    println!(
        "{:<10} {:<8} {:>15} {:>9} {:>9} {:>11} {:>9} {:>9} {:>6}  result",
        "scenario", "status", "cost", "vs gold", "vs publ.", "CO2 t", "vs gold", "vs publ.", "secs"
    );
    for r in &rows {
        let t = &r.target;
        println!(
            "{:<10} {:<8} {:>15.2} {:>9} {:>9} {:>11.2} {:>9} {:>9} {:>6.1}  {}",
            t.id,
            format!("{:?}", r.status).to_lowercase(),
            r.cost,
            pct(r.cost, t.golden_cost),
            pct(r.cost, t.published_cost),
            r.co2,
            pct(r.co2, t.golden_co2),
            pct(r.co2, t.published_co2),
            r.seconds,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    let passed = rows.iter().filter(|r| r.passed()).count();
    println!("{passed}/{} scenarios pass", rows.len());

    if let Some(r) = rows.iter().find(|r| r.status != SolveStatus::Optimal) {
        return Ok(status_code(r.status));
    }
    Ok(if passed == rows.len() { 0 } else { EXIT_FAILURE })
}
