//! Finite-horizon incentive synthesis: find the terminal cost `F` whose
//! Nash closed loop carries `Σ0` to `ΣT`.
//!
//! The unknown `F` is packed as a [`SymVec`]. For a candidate `F` the game
//! Riccati equation runs backward from `Π(T) = F`, the Nash gains follow,
//! and the closed-loop Lyapunov equation runs forward from `Σ0`; the
//! residual is `Σ(T) − ΣT`. A damped Newton iteration with a
//! finite-difference Jacobian drives it to zero. When Newton stalls the
//! solve restarts along a homotopy that scales player 2's channel from 0
//! (plain covariance control) up to its full strength.
//!
//! `H = Σ⁻¹ − Π` is reconstructed afterwards; its differential equation is
//! not used by the solver and serves as an independent check
//! ([`verify_coupled_system`]).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{self, FeedbackLaw};
use crate::model::{FiniteHorizonProblem, Plant, SolverOptions};
use crate::numkit::{self, Direction, MatrixTrajectory, SymVec, TimeGrid};

/// Converged terminal-cost synthesis.
#[derive(Debug, Clone)]
pub struct IncentiveSolution {
    pub f: DMatrix<f64>,
    pub pi: MatrixTrajectory,
    pub sigma: MatrixTrajectory,
    /// `H(t_k) = Σ(t_k)⁻¹ − Π(t_k)`.
    pub h: MatrixTrajectory,
    pub law: FeedbackLaw,
    /// `‖Σ(T) − ΣT‖_F / ‖ΣT‖_F`.
    pub terminal_residual: f64,
    pub newton_iters: usize,
    pub homotopy_used: bool,
}

fn terminal_mismatch(
    plant: &Plant,
    q: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    sigma_t: &DMatrix<f64>,
    grid: &TimeGrid,
    f: &DMatrix<f64>,
    blowup_threshold: f64,
) -> Result<SymVec> {
    let pi = game::integrate_game_riccati_capped(plant, q, f, grid, blowup_threshold)?;
    let law = game::nash_gains(plant, &pi);
    let prop = game::propagate_covariance(plant, &law, sigma0)?;
    Ok(SymVec::pack(&(prop.sigma.last() - sigma_t)))
}

/// Packed `Σ(T; F) − ΣT`.
pub fn shooting_residual(problem: &FiniteHorizonProblem, f: &DMatrix<f64>) -> Result<SymVec> {
    let grid = problem.grid()?;
    terminal_mismatch(
        &problem.plant,
        &problem.q,
        &problem.sigma0,
        &problem.sigma_t,
        &grid,
        f,
        game::DEFAULT_BLOWUP_THRESHOLD,
    )
}

mod newton {
    use super::*;

    pub(super) struct Outcome {
        pub x: DVector<f64>,
        /// Scaled residual norm at `x`.
        pub metric: f64,
        pub iterations: usize,
        pub converged: bool,
    }

    /// Damped Newton with a forward-difference Jacobian. `metric_scale`
    /// converts the residual norm into the convergence metric.
    pub(super) fn solve<R>(
        residual: R,
        x0: DVector<f64>,
        metric_scale: f64,
        opts: &SolverOptions,
    ) -> Result<Outcome>
    where
        R: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
    {
        let mut x = x0;
        let mut r = residual(&x)?;
        let mut norm = r.norm();
        let dim = x.len();
        for iter in 0..opts.max_newton_iters {
            if norm * metric_scale <= opts.newton_tol {
                return Ok(Outcome {
                    x,
                    metric: norm * metric_scale,
                    iterations: iter,
                    converged: true,
                });
            }
            let step = opts.fd_step * x.norm().max(1.0);
            let columns: Vec<Option<DVector<f64>>> = (0..dim)
                .into_par_iter()
                .map(|j| {
                    let mut xp = x.clone();
                    xp[j] += step;
                    residual(&xp).ok().map(|rp| (rp - &r) / step)
                })
                .collect();
            if columns.iter().any(Option::is_none) {
                log::debug!("newton: Jacobian column failed at iteration {iter}");
                return Ok(stalled(x, norm * metric_scale, iter));
            }
            let jac = DMatrix::from_columns(&columns.into_iter().flatten().collect::<Vec<_>>());
            let rhs = -&r;
            let delta = match jac.clone().lu().solve(&rhs) {
                Some(d) if d.iter().all(|v| v.is_finite()) => d,
                _ => match jac.svd(true, true).solve(&rhs, 1e-14) {
                    Ok(d) => d,
                    Err(_) => return Ok(stalled(x, norm * metric_scale, iter)),
                },
            };

            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..=30 {
                let trial = &x + &delta * alpha;
                if let Ok(rt) = residual(&trial) {
                    let nt = rt.norm();
                    if nt.is_finite() && nt < (1.0 - 1e-4 * alpha) * norm {
                        accepted = Some((trial, rt, nt));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((xt, rt, nt)) => {
                    log::debug!("newton: iter {iter} residual {:.3e} step {alpha}", nt * metric_scale);
                    x = xt;
                    r = rt;
                    norm = nt;
                }
                None => return Ok(stalled(x, norm * metric_scale, iter + 1)),
            }
        }
        let converged = norm * metric_scale <= opts.newton_tol;
        Ok(Outcome {
            x,
            metric: norm * metric_scale,
            iterations: opts.max_newton_iters,
            converged,
        })
    }

    fn stalled(x: DVector<f64>, metric: f64, iterations: usize) -> Outcome {
        Outcome {
            x,
            metric,
            iterations,
            converged: false,
        }
    }
}

fn newton_on_f(
    problem: &FiniteHorizonProblem,
    plant: &Plant,
    grid: &TimeGrid,
    f0: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<newton::Outcome> {
    let n = plant.n();
    let scale = 1.0 / problem.sigma_t.norm();
    newton::solve(
        |x| {
            let f = SymVec(x.clone()).unpack(n);
            terminal_mismatch(
                plant,
                &problem.q,
                &problem.sigma0,
                &problem.sigma_t,
                grid,
                &f,
                opts.blowup_threshold,
            )
            .map(|v| v.0)
        },
        SymVec::pack(f0).0,
        scale,
        opts,
    )
}

/// Synthesizes `F` starting from `F = 0`.
pub fn solve_steering(problem: &FiniteHorizonProblem, opts: &SolverOptions) -> Result<IncentiveSolution> {
    let n = problem.plant.n();
    solve_steering_from(problem, opts, &DMatrix::zeros(n, n))
}

/// Synthesizes `F` from a caller-provided initial guess.
pub fn solve_steering_from(
    problem: &FiniteHorizonProblem,
    opts: &SolverOptions,
    initial: &DMatrix<f64>,
) -> Result<IncentiveSolution> {
    opts.validate()?;
    let problem = problem.prepared()?;
    let grid = problem.grid()?;
    let n = problem.plant.n();

    let mut iterations = 0;
    let mut best = f64::INFINITY;
    match newton_on_f(&problem, &problem.plant, &grid, initial, opts) {
        Ok(out) => {
            iterations += out.iterations;
            if out.converged {
                let f = SymVec(out.x).unpack(n);
                return assemble(&problem, &f, iterations, false);
            }
            best = out.metric;
            log::info!("direct Newton stalled at residual {:.3e}; trying homotopy", out.metric);
        }
        Err(Error::RiccatiBlowUp { t }) => {
            log::info!("initial guess escapes at t = {t}; trying homotopy");
        }
        Err(other) => return Err(other),
    }

    let stages = opts.homotopy_steps;
    if stages == 0 {
        return Err(Error::NoConvergence {
            best_residual: best,
            iterations,
        });
    }
    let mut f = DMatrix::zeros(n, n);
    for stage in 0..=stages {
        let s = stage as f64 / stages as f64;
        let plant = problem.plant.with_b2_scaled(s);
        let out = match newton_on_f(&problem, &plant, &grid, &f, opts) {
            Ok(out) => out,
            Err(Error::RiccatiBlowUp { t }) if stage > 0 => {
                log::info!("homotopy stage s = {s} escapes at t = {t}");
                return Err(Error::NoConvergence {
                    best_residual: best,
                    iterations,
                });
            }
            Err(e) => return Err(e),
        };
        iterations += out.iterations;
        if !out.converged {
            log::info!("homotopy stage s = {s} stalled at {:.3e}", out.metric);
            return Err(Error::NoConvergence {
                best_residual: if stage == stages { best.min(out.metric) } else { best },
                iterations,
            });
        }
        f = SymVec(out.x).unpack(n);
    }
    assemble(&problem, &f, iterations, true)
}

/// Builds the full solution record for a given `F`.
pub fn assemble(
    problem: &FiniteHorizonProblem,
    f: &DMatrix<f64>,
    newton_iters: usize,
    homotopy_used: bool,
) -> Result<IncentiveSolution> {
    let eval = game::nash_value(problem, f)?;
    let h = MatrixTrajectory::new(
        eval.sigma.grid,
        eval.sigma
            .values
            .iter()
            .zip(&eval.pi.values)
            .map(|(s, p)| numkit::sym_inverse(s).map(|si| si - p))
            .collect::<Result<_>>()?,
    )?;
    let terminal_residual = (eval.sigma.last() - &problem.sigma_t).norm() / problem.sigma_t.norm();
    Ok(IncentiveSolution {
        f: f.clone(),
        pi: eval.pi,
        sigma: eval.sigma,
        h,
        law: eval.law,
        terminal_residual,
        newton_iters,
        homotopy_used,
    })
}

/// Residuals of the coupled Π/H system along a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSystemReport {
    /// Max over interior nodes of `‖Ḣ_cd − RHS_H‖_F` (central differences).
    pub h_ode_residual: f64,
    /// Max over interior nodes of `‖Ḣ_cd‖_F`, a scale for the residual.
    pub h_rate_scale: f64,
    /// `‖Σ0⁻¹ − Π(0) − H(0)‖_F / ‖Σ0⁻¹‖_F`.
    pub initial_boundary: f64,
    /// `‖ΣT⁻¹ − Π(T) − H(T)‖_F / ‖ΣT⁻¹‖_F`.
    pub terminal_boundary: f64,
    /// Max over nodes of `‖(Π+H)(B1B1' − B2B2' − CC')(Π+H)‖_F`.
    pub cross_term_max: f64,
    /// For single-player plants: max difference between the H right-hand
    /// side written for plain covariance control and the game form.
    pub single_player_gap: Option<f64>,
}

fn h_rhs(plant: &Plant, q: &DMatrix<f64>, d: &DMatrix<f64>, pi: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let at = plant.a.transpose();
    let sum = pi + h;
    -(&at * h) - h * &plant.a - h * d * h + q + &sum * (d - plant.noise()) * &sum
}

/// H right-hand side for single-player covariance control with input `b`.
pub fn covariance_control_h_rhs(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> DMatrix<f64> {
    let bb = b * b.transpose();
    let sum = pi + h;
    -(a.transpose() * h) - h * a - h * &bb * h + q + &sum * (&bb - c * c.transpose()) * &sum
}

pub fn verify_coupled_system(solution: &IncentiveSolution, problem: &FiniteHorizonProblem) -> Result<CoupledSystemReport> {
    let plant = &problem.plant;
    let d = plant.channel_difference();
    let grid = solution.h.grid;
    let dt = grid.dt();
    let hs = &solution.h.values;
    let ps = &solution.pi.values;
    let single = plant.is_single_player();

    let mut h_ode_residual: f64 = 0.0;
    let mut h_rate_scale: f64 = 0.0;
    let mut single_gap: f64 = 0.0;
    for k in 1..grid.steps() {
        let rate = (&hs[k + 1] - &hs[k - 1]) / (2.0 * dt);
        let rhs = h_rhs(plant, &problem.q, &d, &ps[k], &hs[k]);
        h_ode_residual = h_ode_residual.max((&rate - &rhs).norm());
        h_rate_scale = h_rate_scale.max(rate.norm());
        if single {
            let cc = covariance_control_h_rhs(&plant.a, &plant.b1, &plant.c, &problem.q, &ps[k], &hs[k]);
            single_gap = single_gap.max((cc - rhs).norm());
        }
    }
    let cross_term_max = ps
        .iter()
        .zip(hs)
        .map(|(p, h)| {
            let sum = p + h;
            (&sum * (&d - plant.noise()) * &sum).norm()
        })
        .fold(0.0, f64::max);

    let s0i = numkit::sym_inverse(&problem.sigma0)?;
    let sti = numkit::sym_inverse(&problem.sigma_t)?;
    let initial_boundary = (&s0i - &ps[0] - &hs[0]).norm() / s0i.norm();
    let last = hs.len() - 1;
    let terminal_boundary = (&sti - &ps[last] - &hs[last]).norm() / sti.norm();
    Ok(CoupledSystemReport {
        h_ode_residual,
        h_rate_scale,
        initial_boundary,
        terminal_boundary,
        cross_term_max,
        single_player_gap: single.then_some(single_gap),
    })
}

/// Covariance control solved by forward shooting on `Π(0)`: `Π` and `H`
/// are integrated jointly from `Π(0) + H(0) = Σ0⁻¹` with the
/// single-player equations, and `Π(T) + H(T) = ΣT⁻¹` is enforced by
/// Newton. Returns `F = Π(T)`. Independent of [`solve_steering`] apart
/// from the shared RK4 kernel.
#[derive(Debug, Clone)]
pub struct CovarianceControlSolution {
    pub f: DMatrix<f64>,
    pub pi0: DMatrix<f64>,
    pub boundary_residual: f64,
    pub newton_iters: usize,
}

pub fn solve_covariance_control(
    problem: &FiniteHorizonProblem,
    opts: &SolverOptions,
    pi0_guess: &DMatrix<f64>,
) -> Result<CovarianceControlSolution> {
    opts.validate()?;
    let problem = problem.prepared()?;
    if !problem.plant.is_single_player() {
        return Err(Error::InvalidOption(
            "covariance-control solve needs a plant without player 2".into(),
        ));
    }
    let plant = &problem.plant;
    let n = plant.n();
    let grid = problem.grid()?;
    let s0i = numkit::sym_inverse(&problem.sigma0)?;
    let sti = numkit::sym_inverse(&problem.sigma_t)?;
    let bb = &plant.b1 * plant.b1.transpose();
    let at = plant.a.transpose();

    let propagate = |pi0: &DMatrix<f64>| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mut x0 = DMatrix::zeros(2 * n, 2 * n);
        x0.view_mut((0, 0), (n, n)).copy_from(pi0);
        x0.view_mut((n, n), (n, n)).copy_from(&(&s0i - pi0));
        let traj = numkit::integrate_matrix_ode(
            |_, x| {
                let pi = x.view((0, 0), (n, n)).into_owned();
                let h = x.view((n, n), (n, n)).into_owned();
                let dpi = -(&at * &pi) - &pi * &plant.a + &pi * &bb * &pi - &problem.q;
                let dh = covariance_control_h_rhs(&plant.a, &plant.b1, &plant.c, &problem.q, &pi, &h);
                let mut out = DMatrix::zeros(2 * n, 2 * n);
                out.view_mut((0, 0), (n, n)).copy_from(&dpi);
                out.view_mut((n, n), (n, n)).copy_from(&dh);
                out
            },
            &x0,
            &grid,
            Direction::Forward,
            opts.blowup_threshold,
        )?;
        let xt = traj.last();
        Ok((
            xt.view((0, 0), (n, n)).into_owned(),
            xt.view((n, n), (n, n)).into_owned(),
        ))
    };

    let out = newton::solve(
        |x| {
            let (pi, h) = propagate(&SymVec(x.clone()).unpack(n))?;
            Ok(SymVec::pack(&(pi + h - &sti)).0)
        },
        SymVec::pack(pi0_guess).0,
        1.0 / sti.norm(),
        opts,
    )?;
    if !out.converged {
        return Err(Error::NoConvergence {
            best_residual: out.metric,
            iterations: out.iterations,
        });
    }
    let pi0 = SymVec(out.x).unpack(n);
    let (f, _) = propagate(&pi0)?;
    Ok(CovarianceControlSolution {
        f: numkit::symmetrize(&f),
        pi0,
        boundary_residual: out.metric,
        newton_iters: out.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    pub(crate) fn golden(steps: usize) -> FiniteHorizonProblem {
        FiniteHorizonProblem {
            plant: Plant::new(scalar(0.0), scalar(2f64.sqrt()), scalar(1.0), scalar(1.0)).unwrap(),
            q: scalar(0.0),
            horizon: 1.0,
            sigma0: scalar(1.0),
            sigma_t: scalar(1.0),
            grid_steps: steps,
        }
    }

    /// Closed-form Σ(1; F) for the golden family: with Π = 1/(c − t),
    /// c = 1 + 1/F, the Lyapunov equation integrates to
    /// Σ(t) = (c − t) + K(c − t)², K = (1 − c)/c².
    fn golden_terminal_variance(f: f64) -> f64 {
        if f == 0.0 {
            return 2.0;
        }
        let c = 1.0 + 1.0 / f;
        let k = (1.0 - c) / (c * c);
        (c - 1.0) + k * (c - 1.0) * (c - 1.0)
    }

    fn bisect(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (g(lo) > 0.0) == (g(mid) > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn golden_oracle_root() {
        let root = bisect(0.1, 2.0, |f| golden_terminal_variance(f) - 1.0);
        assert!((root - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn golden_residual_examples() {
        let p = golden(400);
        let f_star = (5f64.sqrt() - 1.0) / 2.0;
        assert!(shooting_residual(&p, &scalar(f_star)).unwrap().norm() < 1e-9);
        let r0 = shooting_residual(&p, &scalar(0.0)).unwrap();
        assert!((r0.norm() - 1.0).abs() < 1e-12);
        for f in [0.2, 0.9, 1.7] {
            let r = shooting_residual(&p, &scalar(f)).unwrap().0[0];
            assert!((r - (golden_terminal_variance(f) - 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn golden_solve() {
        let sol = solve_steering(&golden(400), &SolverOptions::default()).unwrap();
        let f_star = (5f64.sqrt() - 1.0) / 2.0;
        assert!((sol.f[(0, 0)] - f_star).abs() < 1e-6);
        assert!((sol.pi.first()[(0, 0)] - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-6);
        assert!(sol.terminal_residual <= 1e-9);
        assert!(!sol.homotopy_used);
    }

    #[test]
    fn golden_coupled_system_residuals() {
        let opts = SolverOptions::default();
        let r200 = verify_coupled_system(&solve_steering(&golden(200), &opts).unwrap(), &golden(200)).unwrap();
        let r400 = verify_coupled_system(&solve_steering(&golden(400), &opts).unwrap(), &golden(400)).unwrap();
        assert!(r200.h_ode_residual <= 1e-3);
        assert!(r400.h_ode_residual <= 2.6e-4);
        assert!(r200.h_ode_residual / r400.h_ode_residual > 3.0);
        // B1B1' − B2B2' = CC' on this scenario: no coupling term.
        assert!(r200.cross_term_max < 1e-12);
        assert!(r200.initial_boundary < 1e-12);
        assert!(r200.terminal_boundary < 1e-8);
    }

    #[test]
    fn already_stationary_loop_needs_no_incentive() {
        let a = dmatrix![-1.0, 0.5; 0.0, -2.0];
        let c = DMatrix::<f64>::identity(2, 2);
        let sigma = numkit::solve_lyapunov(&a, &(&c * c.transpose())).unwrap();
        let p = FiniteHorizonProblem {
            plant: Plant::new(a, DMatrix::identity(2, 2), dmatrix![0.3; 0.1], c).unwrap(),
            q: DMatrix::zeros(2, 2),
            horizon: 5.0,
            sigma0: sigma.clone(),
            sigma_t: sigma,
            grid_steps: 200,
        };
        let sol = solve_steering(&p, &SolverOptions::default()).unwrap();
        assert!(sol.f.norm() < 1e-8);
        assert_eq!(sol.newton_iters, 0);
    }

    #[test]
    fn shooting_residual_is_small_at_solution() {
        let p = golden(100);
        let opts = SolverOptions::default();
        let sol = solve_steering(&p, &opts).unwrap();
        assert!(shooting_residual(&p, &sol.f).unwrap().norm() <= opts.newton_tol);
    }

    #[test]
    fn scaling_noise_and_covariances_leaves_f_unchanged() {
        let opts = SolverOptions::default();
        let base = solve_steering(&golden(200), &opts).unwrap().f[(0, 0)];
        let lambda: f64 = 3.0;
        let mut p = golden(200);
        p.sigma0 *= lambda;
        p.sigma_t *= lambda;
        p.plant.c *= lambda.sqrt();
        let scaled = solve_steering(&p, &opts).unwrap().f[(0, 0)];
        assert!((scaled - base).abs() < 1e-8, "{scaled} vs {base}");
    }

    #[test]
    fn scaling_input_channels_scales_f_inversely() {
        let opts = SolverOptions::default();
        let base = solve_steering(&golden(200), &opts).unwrap().f[(0, 0)];
        let lambda: f64 = 3.0;
        let mut p = golden(200);
        p.plant.b1 *= lambda.sqrt();
        p.plant.b2 *= lambda.sqrt();
        let scaled = solve_steering(&p, &opts).unwrap().f[(0, 0)];
        assert!((scaled - base / lambda).abs() < 1e-8, "{scaled} vs {}", base / lambda);
    }

    #[test]
    fn single_player_forward_solve_matches_shooting() {
        let plant = Plant::new(
            dmatrix![-0.5, 0.3; -0.2, -1.0],
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let p = FiniteHorizonProblem {
            plant,
            q: DMatrix::zeros(2, 2),
            horizon: 1.0,
            sigma0: dmatrix![1.0, 0.2; 0.2, 0.8],
            sigma_t: dmatrix![0.5, -0.1; -0.1, 0.7],
            grid_steps: 200,
        };
        let opts = SolverOptions::default();
        let shoot = solve_steering(&p, &opts).unwrap();
        let fwd = solve_covariance_control(&p, &opts, &DMatrix::zeros(2, 2)).unwrap();
        assert!((&shoot.f - &fwd.f).norm() < 1e-6, "{} vs {}", shoot.f, fwd.f);
        let report = verify_coupled_system(&shoot, &p).unwrap();
        assert_eq!(report.single_player_gap, Some(0.0));
    }

    #[test]
    fn homotopy_recovers_from_escaping_initial_guess() {
        // Π(T) = −10 escapes 0.1 before T on the golden scenario.
        let p = golden(200);
        assert!(matches!(
            shooting_residual(&p, &scalar(-10.0)),
            Err(Error::RiccatiBlowUp { .. })
        ));
        let sol = solve_steering_from(&p, &SolverOptions::default(), &scalar(-10.0)).unwrap();
        assert!(sol.homotopy_used);
        assert!((sol.f[(0, 0)] - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn no_homotopy_reports_no_convergence() {
        let opts = SolverOptions {
            max_newton_iters: 1,
            homotopy_steps: 0,
            ..SolverOptions::default()
        };
        assert!(matches!(
            solve_steering(&golden(100), &opts),
            Err(Error::NoConvergence { .. })
        ));
    }
}
