//! `covsteer steer|stationary|simulate|verify`.
//!
//! Exit codes: 0 ok, 1 I/O, 2 validation, 3 non-convergence, 4 infeasible,
//! 5 statistical failure, 6 verification failure. Logging is controlled by
//! `COVSTEER_LOG` (`error`, `info`, `debug`).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::document::{Diagnostics, IncentivePayload, Payload, SolutionDocument, StationaryPayload};
use crate::error::{Error, Result};
use crate::game;
use crate::minimax::{self, MinimaxOptions};
use crate::model::scenario::{Scenario, ScenarioDocument};
use crate::model::{FiniteHorizonProblem, StationaryProblem};
use crate::sim::{self, SimConfig};
use crate::stationary;
use crate::steering;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;
pub const EXIT_STATISTICAL: i32 = 5;
pub const EXIT_VERIFICATION: i32 = 6;

/// Perturbations per player used by `verify`.
pub const VERIFY_SADDLE_COUNT: usize = 20;
pub const VERIFY_SADDLE_MAGNITUDE: f64 = 0.1;
pub const VERIFY_SADDLE_SEED: u64 = 7;
/// Relative terminal-covariance tolerance used by `verify`.
pub const VERIFY_TERMINAL_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "covsteer", version, about = "Covariance steering through incentive design in two-player games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Shooting,
    Minimax,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Convergence tolerance (Newton residual or saddle field norm).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap (Newton or extragradient).
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Time grid size M.
    #[arg(long)]
    pub grid_steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the terminal cost F of a finite-horizon scenario.
    Steer {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Method::Shooting)]
        method: Method,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Synthesize the state cost Q of a stationary scenario.
    Stationary {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo check of a finite-horizon solution.
    Simulate {
        scenario: PathBuf,
        solution: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        /// Defaults to the solution grid spacing.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Recompute a finite-horizon solution from its F and check it.
    Verify { scenario: PathBuf, solution: PathBuf },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::DimensionMismatch(_)
        | Error::NotSymmetric { .. }
        | Error::NotPositiveDefinite { .. }
        | Error::NotPositiveSemidefinite { .. }
        | Error::NonPositiveHorizon(_)
        | Error::Uncontrollable { .. }
        | Error::NonFinite { .. }
        | Error::InvalidOption(_)
        | Error::Scenario(_)
        | Error::Json(_) => EXIT_VALIDATION,
        Error::BlowUp { .. }
        | Error::RiccatiBlowUp { .. }
        | Error::SingularOperator
        | Error::NoConvergence { .. }
        | Error::SingularKkt { .. }
        | Error::NonFinitePath { .. } => EXIT_NO_CONVERGENCE,
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        Error::SaddleViolation { .. } => EXIT_VERIFICATION,
    }
}

/// Process entry point: logging, argument parsing, dispatch.
pub fn main_entry() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("COVSTEER_LOG", "error"))
        .format_timestamp(None)
        .try_init();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_VALIDATION;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Steer {
            scenario,
            out: path,
            method,
            overrides,
        } => cmd_steer(&scenario, path.as_deref(), method, &overrides, out),
        Command::Stationary { scenario, out: path } => cmd_stationary(&scenario, path.as_deref(), out),
        Command::Simulate {
            scenario,
            solution,
            paths,
            dt,
            seed,
            csv,
        } => cmd_simulate(&scenario, &solution, paths, dt, seed, csv.as_deref(), out),
        Command::Verify { scenario, solution } => cmd_verify(&scenario, &solution, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_scenario(path: &Path) -> Result<ScenarioDocument> {
    ScenarioDocument::from_json(&read_file(path)?)
}

fn load_finite(path: &Path) -> Result<(ScenarioDocument, FiniteHorizonProblem)> {
    let doc = load_scenario(path)?;
    match doc.scenario()? {
        Scenario::Finite(p) => Ok((doc, p)),
        Scenario::Stationary(_) => Err(Error::Scenario(
            "expected a finite-horizon scenario (horizon, Q, Sigma0, SigmaT)".into(),
        )),
    }
}

fn load_solution(path: &Path) -> Result<SolutionDocument> {
    SolutionDocument::from_json(&read_file(path)?)
}

fn write_document(path: Option<&Path>, doc: &SolutionDocument, out: &mut dyn Write) -> Result<()> {
    if let Some(path) = path {
        std::fs::write(path, doc.to_json()? + "\n")?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}

fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:>14.9}", m[(i, j)])).collect();
        let _ = writeln!(s, "  [{}]", row.join(", "));
    }
    s
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn cmd_steer(
    path: &Path,
    out_path: Option<&Path>,
    method: Method,
    overrides: &Overrides,
    out: &mut dyn Write,
) -> Result<i32> {
    let (doc, mut problem) = load_finite(path)?;
    let mut opts = doc.options();
    if let Some(steps) = overrides.grid_steps {
        problem.grid_steps = steps;
    }
    let problem = problem.prepared()?;
    let start = Instant::now();
    let mut diagnostics = Diagnostics::default();
    let (solution, method_name) = match method {
        Method::Shooting => {
            if let Some(tol) = overrides.tol {
                opts.newton_tol = tol;
            }
            if let Some(iters) = overrides.max_iters {
                opts.max_newton_iters = iters;
            }
            let sol = steering::solve_steering(&problem, &opts)?;
            diagnostics.iterations = sol.newton_iters;
            (sol, "shooting")
        }
        Method::Minimax => {
            let mut mm = MinimaxOptions::default();
            if let Some(tol) = overrides.tol {
                mm.tol = tol;
            }
            if let Some(iters) = overrides.max_iters {
                mm.max_iters = iters;
            }
            let rep = minimax::extragradient_solve(&problem, &mm)?;
            diagnostics.iterations = rep.iterations;
            diagnostics.residuals.insert("field_norm".into(), rep.field_norm);
            diagnostics.residuals.insert("constraint_norm".into(), rep.constraint_norm);
            writeln!(
                out,
                "extragradient: {} iterations, field norm {:.3e}",
                rep.iterations, rep.field_norm
            )?;
            (steering::assemble(&problem, &rep.f_recovered, 0, false)?, "minimax")
        }
    };
    diagnostics.timings_ms.insert("solve".into(), elapsed_ms(start));
    diagnostics
        .residuals
        .insert("terminal_residual".into(), solution.terminal_residual);
    let report = steering::verify_coupled_system(&solution, &problem)?;
    diagnostics.residuals.insert("h_ode_residual".into(), report.h_ode_residual);

    write!(out, "F =\n{}", format_matrix(&solution.f))?;
    writeln!(out, "terminal_residual = {:.3e}", solution.terminal_residual)?;
    if solution.homotopy_used {
        writeln!(out, "homotopy in the player-2 channel was needed")?;
    }
    let doc = SolutionDocument::new(
        ScenarioDocument::from_finite(&problem, Some(opts)),
        Payload::Incentive(IncentivePayload::from_solution(&solution, method_name)),
        diagnostics,
    );
    write_document(out_path, &doc, out)?;
    Ok(EXIT_OK)
}

fn cmd_stationary(path: &Path, out_path: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let doc = load_scenario(path)?;
    let problem: StationaryProblem = match doc.scenario()? {
        Scenario::Stationary(p) => p,
        Scenario::Finite(_) => {
            return Err(Error::Scenario("expected a stationary scenario (stationary.Sigma)".into()));
        }
    };
    let start = Instant::now();
    let sol = stationary::solve_stationary(&problem)?;
    let mut diagnostics = Diagnostics::default();
    diagnostics.timings_ms.insert("solve".into(), elapsed_ms(start));
    diagnostics.residuals.insert("lyapunov_residual".into(), sol.lyapunov_residual);
    diagnostics.residuals.insert("riccati_residual".into(), sol.riccati_residual);

    write!(out, "Q_out =\n{}", format_matrix(&sol.q_out))?;
    write!(out, "K1 =\n{}", format_matrix(&sol.k1))?;
    write!(out, "K2 =\n{}", format_matrix(&sol.k2))?;
    writeln!(out, "hurwitz_margin = {:.6e}", sol.hurwitz_margin)?;
    writeln!(out, "epsilon_used = {:e}", sol.epsilon_used)?;
    if let Some(r) = &sol.regularized {
        writeln!(out, "regularized margin = {:.6e}", r.margin)?;
    }
    if sol.non_unique {
        writeln!(out, "note: P is the minimum-norm solution of a singular system")?;
    }
    let doc_out = SolutionDocument::new(
        ScenarioDocument::from_stationary(&problem, doc.solver),
        Payload::Stationary(StationaryPayload::from_solution(&sol)),
        diagnostics,
    );
    write_document(out_path, &doc_out, out)?;
    if sol.regularization_failed() {
        writeln!(out, "no epsilon up to 1e-1 makes the closed loop Hurwitz")?;
        return Ok(EXIT_NO_CONVERGENCE);
    }
    Ok(EXIT_OK)
}

/// Eleven evenly spaced record times on `[0, T]`.
fn record_times(horizon: f64) -> Vec<f64> {
    (0..=10).map(|k| horizon * k as f64 / 10.0).collect()
}

fn cmd_simulate(
    scenario_path: &Path,
    solution_path: &Path,
    paths: usize,
    dt: Option<f64>,
    seed: u64,
    csv: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let (_, problem) = load_finite(scenario_path)?;
    let problem = problem.prepared()?;
    let doc = load_solution(solution_path)?;
    let payload = doc.incentive()?;
    let law = payload.law()?;
    let model = payload.sigma()?;
    let (n, m, p) = (problem.plant.n(), problem.plant.m(), problem.plant.p());
    if law.k1.first().shape() != (m, n) || law.k2.first().shape() != (p, n) || model.first().shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "solution gains are {:?} and {:?}, scenario needs ({m}, {n}) and ({p}, {n})",
            law.k1.first().shape(),
            law.k2.first().shape()
        )));
    }
    let grid = law.grid();
    if (grid.t1() - problem.horizon).abs() > 1e-9 * problem.horizon || grid.t0() != 0.0 {
        return Err(Error::DimensionMismatch(format!(
            "solution covers [{}, {}], scenario horizon is {}",
            grid.t0(),
            grid.t1(),
            problem.horizon
        )));
    }
    let config = SimConfig {
        n_paths: paths,
        dt: dt.unwrap_or(grid.dt()),
        seed,
        record_times: record_times(problem.horizon),
    };
    let start = Instant::now();
    let empirical = sim::simulate_paths(&problem.plant, &law, &problem.sigma0, &config)?;
    let scheme = sim::euler_maruyama_covariance(&problem.plant, &law, &problem.sigma0, &config)?;
    log::info!("simulation took {:.1} ms", elapsed_ms(start));

    if let Some(csv_path) = csv {
        let mut text = String::from("t,i,j,empirical,model,target\n");
        let last = empirical.len() - 1;
        for (k, e) in empirical.iter().enumerate() {
            let model_t = model.at(e.time);
            let target = match k {
                0 => Some(&problem.sigma0),
                k if k == last => Some(&problem.sigma_t),
                _ => None,
            };
            for i in 0..n {
                for j in i..n {
                    let tgt = target.map(|t| t[(i, j)].to_string()).unwrap_or_default();
                    let _ = writeln!(text, "{},{i},{j},{},{},{tgt}", e.time, e.matrix[(i, j)], model_t[(i, j)]);
                }
            }
        }
        std::fs::write(csv_path, text)?;
        writeln!(out, "wrote {}", csv_path.display())?;
    }

    let terminal = empirical.last().expect("record times include T");
    let bias = sim::bias_allowance(&scheme.last().expect("record times include T").1, &problem.sigma_t);
    let d = sim::covariance_distance(terminal, &problem.sigma_t, bias);
    writeln!(out, "paths = {paths}, dt = {:e}, seed = {seed}", config.dt)?;
    writeln!(
        out,
        "terminal covariance: relative distance {:.4e}, threshold {:.4e} (3n/sqrt(N) = {:.4e}, bias allowance = {:.4e})",
        d.frobenius_rel,
        d.threshold,
        d.threshold - bias,
        bias
    )?;
    if d.pass {
        writeln!(out, "PASS")?;
        Ok(EXIT_OK)
    } else {
        writeln!(out, "FAIL")?;
        Ok(EXIT_STATISTICAL)
    }
}

/// One line of the verification table.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyCheck {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    /// `value ≤ tolerance` unless `lower_bound`, then `value ≥ tolerance`.
    pub lower_bound: bool,
}

impl VerifyCheck {
    pub fn passed(&self) -> bool {
        if self.lower_bound {
            self.value >= self.tolerance
        } else {
            self.value <= self.tolerance
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
    pub cross_term_max: f64,
    pub single_player_gap: Option<f64>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(VerifyCheck::passed)
    }
}

/// Recomputes Π, Σ, H and the Nash law from `f` and checks the coupled
/// system, the value identity and the saddle inequalities.
pub fn verify_solution(problem: &FiniteHorizonProblem, f: &DMatrix<f64>) -> Result<VerifyReport> {
    let problem = problem.prepared()?;
    let sol = steering::assemble(&problem, f, 0, false)?;
    let coupled = steering::verify_coupled_system(&sol, &problem)?;
    let value = game::nash_value(&problem, f)?.value;
    let gap = value.identity_gap().unwrap_or(f64::INFINITY).abs();
    let saddle = game::saddle_margins(
        &problem,
        f,
        VERIFY_SADDLE_COUNT,
        VERIFY_SADDLE_MAGNITUDE,
        VERIFY_SADDLE_SEED,
    )?;

    let mut checks = vec![
        VerifyCheck {
            name: "terminal covariance (relative)",
            value: sol.terminal_residual,
            tolerance: VERIFY_TERMINAL_TOL,
            lower_bound: false,
        },
        VerifyCheck {
            name: "initial boundary Pi(0)+H(0) = Sigma0^-1",
            value: coupled.initial_boundary,
            tolerance: 1e-9,
            lower_bound: false,
        },
        VerifyCheck {
            name: "terminal boundary Pi(T)+H(T) = SigmaT^-1",
            value: coupled.terminal_boundary,
            tolerance: VERIFY_TERMINAL_TOL,
            lower_bound: false,
        },
        VerifyCheck {
            name: "H equation residual",
            value: coupled.h_ode_residual,
            tolerance: 1e-3 * (1.0 + coupled.h_rate_scale),
            lower_bound: false,
        },
        VerifyCheck {
            name: "value identity gap",
            value: gap,
            tolerance: (10.0 * value.quadrature_bound).max(1e-10 * (1.0 + value.j1.abs())),
            lower_bound: false,
        },
        VerifyCheck {
            name: "saddle: min player-1 margin",
            value: saddle.player1_min(),
            tolerance: -game::SADDLE_SLACK,
            lower_bound: true,
        },
    ];
    if !saddle.player2_margins.is_empty() {
        checks.push(VerifyCheck {
            name: "saddle: max player-2 margin",
            value: saddle.player2_max(),
            tolerance: game::SADDLE_SLACK,
            lower_bound: false,
        });
    }
    Ok(VerifyReport {
        checks,
        cross_term_max: coupled.cross_term_max,
        single_player_gap: coupled.single_player_gap,
    })
}

fn cmd_verify(scenario_path: &Path, solution_path: &Path, out: &mut dyn Write) -> Result<i32> {
    let (_, problem) = load_finite(scenario_path)?;
    let doc = load_solution(solution_path)?;
    let payload = doc.incentive()?;
    let f = payload.f()?;
    let n = problem.plant.n();
    if f.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("F is {:?}, scenario needs ({n}, {n})", f.shape())));
    }
    let report = match verify_solution(&problem, &f) {
        Ok(r) => r,
        Err(e) if exit_code(&e) == EXIT_NO_CONVERGENCE => {
            writeln!(out, "cannot evaluate the document's F: {e}")?;
            writeln!(out, "FAIL")?;
            return Ok(EXIT_VERIFICATION);
        }
        Err(e) => return Err(e),
    };
    writeln!(out, "{:<44} {:>12} {:>12}  result", "check", "value", "tolerance")?;
    for c in &report.checks {
        writeln!(
            out,
            "{:<44} {:>12.3e} {:>12.3e}  {}",
            c.name,
            c.value,
            c.tolerance,
            if c.passed() { "ok" } else { "FAIL" }
        )?;
    }
    writeln!(
        out,
        "cross term max |(Pi+H)(B1B1'-B2B2'-CC')(Pi+H)| = {:.3e}",
        report.cross_term_max
    )?;
    if let Some(gap) = report.single_player_gap {
        writeln!(
            out,
            "reduces to covariance control: player-2 terms vanish (H equation gap {gap:.3e})"
        )?;
    }
    if report.passed() {
        writeln!(out, "PASS")?;
        Ok(EXIT_OK)
    } else {
        writeln!(out, "FAIL")?;
        Ok(EXIT_VERIFICATION)
    }
}
