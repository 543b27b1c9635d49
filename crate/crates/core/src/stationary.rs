//! Infinite-horizon covariance assignment: pick the state cost `Q` whose
//! stationary Nash loop holds the covariance at `Σ`.
//!
//! With `D = B1B1' − B2B2'` and `W = AΣ + ΣA' + CC'`, stationarity of the
//! Lagrangian gives `D·P·Σ + Σ·P·D = W` for the multiplier `P`; then
//! `K1 = −B1'P`, `K2 = B2'P` and `Q = PDP − A'P − PA`. When the resulting
//! loop is only marginally stable the gains are shifted by `−½εB_i'Σ⁻¹`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game;
use crate::minimax;
use crate::model::{Plant, StationaryProblem};
use crate::numkit::{self, SymVec, TimeGrid};

/// Regularization strengths tried in order.
pub const EPSILON_LADDER: [f64; 6] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feasibility {
    pub feasible: bool,
    pub lhs_rank: usize,
    pub rhs_rank: usize,
}

/// Rank test `rank[[W, B], [B', 0]] = rank[[0, B], [B', 0]]` with
/// `B = [B1 B2]`.
pub fn stationary_feasibility(plant: &Plant, sigma: &DMatrix<f64>) -> Feasibility {
    let n = plant.n();
    let b = plant.input_stack();
    let k = b.ncols();
    let w = lyapunov_offset(plant, sigma);
    let mut lhs = DMatrix::zeros(n + k, n + k);
    lhs.view_mut((0, n), (n, k)).copy_from(&b);
    lhs.view_mut((n, 0), (k, n)).copy_from(&b.transpose());
    let rhs_rank = numkit::numerical_rank(&lhs);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w);
    let lhs_rank = numkit::numerical_rank(&lhs);
    Feasibility {
        feasible: lhs_rank == rhs_rank,
        lhs_rank,
        rhs_rank,
    }
}

/// `W = AΣ + ΣA' + CC'`.
pub fn lyapunov_offset(plant: &Plant, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    numkit::symmetrize(&(&plant.a * sigma + sigma * plant.a.transpose() + plant.noise()))
}

/// Gains after the `ε` shift and the margin of the loop they close.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedGains {
    pub epsilon: f64,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub margin: f64,
    /// `‖A_εΣ + ΣA_ε' + CC' + εBB'‖_F`.
    pub identity_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    pub p: DMatrix<f64>,
    pub q_out: DMatrix<f64>,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    /// Margin of the unregularized loop.
    pub hurwitz_margin: f64,
    /// 0 when no regularization was needed.
    pub epsilon_used: f64,
    /// Shifted gains when the unregularized margin is not positive and a
    /// ladder value stabilizes the loop.
    pub regularized: Option<RegularizedGains>,
    /// `‖AclΣ + ΣAcl' + CC'‖_F / ‖CC'‖_F` for the unregularized loop.
    pub lyapunov_residual: f64,
    /// `‖A'P + PA − PDP + Q_out‖_F`.
    pub riccati_residual: f64,
    /// `P` is the minimum-norm least-squares solution of a singular system.
    pub non_unique: bool,
}

impl StationarySolution {
    /// The loop needed a shift but no ladder value made it Hurwitz.
    pub fn regularization_failed(&self) -> bool {
        self.hurwitz_margin <= 0.0 && self.regularized.is_none()
    }
}

pub fn solve_stationary(problem: &StationaryProblem) -> Result<StationarySolution> {
    let problem = problem.prepared()?;
    let plant = &problem.plant;
    let sigma = &problem.sigma;
    let feas = stationary_feasibility(plant, sigma);
    if !feas.feasible {
        return Err(Error::Infeasible {
            lhs_rank: feas.lhs_rank,
            rhs_rank: feas.rhs_rank,
        });
    }
    let d = plant.channel_difference();
    let w = lyapunov_offset(plant, sigma);
    let bil = numkit::solve_bilateral_sym(&d, sigma, &w)?;
    if bil.singular && bil.residual > 1e-8 * w.norm() {
        return Err(Error::SingularKkt { residual: bil.residual });
    }
    if bil.singular && d.norm() == 0.0 {
        return Err(Error::SingularKkt { residual: bil.residual });
    }
    let p = bil.p;
    let k1 = -(plant.b1.transpose() * &p);
    let k2 = plant.b2.transpose() * &p;
    let at = plant.a.transpose();
    let q_out = numkit::symmetrize(&(&p * &d * &p - &at * &p - &p * &plant.a));
    let riccati_residual = (&at * &p + &p * &plant.a - &p * &d * &p + &q_out).norm();

    let acl = plant.closed_loop(&k1, &k2);
    let noise = plant.noise();
    let lyapunov_residual =
        (&acl * sigma + sigma * acl.transpose() + &noise).norm() / noise.norm().max(f64::MIN_POSITIVE);
    let (_, hurwitz_margin) = numkit::is_hurwitz(&acl);

    let mut regularized = None;
    if hurwitz_margin <= 0.0 {
        let ladder: Vec<RegularizedGains> = EPSILON_LADDER
            .par_iter()
            .map(|&eps| epsilon_regularize(plant, &k1, &k2, sigma, eps))
            .collect::<Result<_>>()?;
        regularized = ladder.into_iter().find(|r| r.margin > 0.0);
        match &regularized {
            Some(r) => log::info!("loop margin {hurwitz_margin}; regularized with epsilon {}", r.epsilon),
            None => log::warn!("no epsilon up to 1e-1 makes the stationary loop Hurwitz"),
        }
    }
    Ok(StationarySolution {
        epsilon_used: regularized.as_ref().map_or(0.0, |r| r.epsilon),
        p,
        q_out,
        k1,
        k2,
        hurwitz_margin,
        regularized,
        lyapunov_residual,
        riccati_residual,
        non_unique: bil.singular,
    })
}

/// `K_iε = K_i − ½εB_i'Σ⁻¹` and the margin of the shifted loop.
pub fn epsilon_regularize(
    plant: &Plant,
    k1: &DMatrix<f64>,
    k2: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    epsilon: f64,
) -> Result<RegularizedGains> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidOption(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let si = numkit::sym_inverse(sigma)?;
    let k1e = k1 - plant.b1.transpose() * &si * (0.5 * epsilon);
    let k2e = k2 - plant.b2.transpose() * &si * (0.5 * epsilon);
    let acl = plant.closed_loop(&k1e, &k2e);
    let (_, margin) = numkit::is_hurwitz(&acl);
    let b = plant.input_stack();
    let identity_gap =
        (&acl * sigma + sigma * acl.transpose() + plant.noise() + &b * b.transpose() * epsilon).norm();
    Ok(RegularizedGains {
        epsilon,
        k1: k1e,
        k2: k2e,
        margin,
        identity_gap,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceGap {
    pub epsilon: f64,
    pub sigma_eps: DMatrix<f64>,
    /// `Σ − Σ_ε`.
    pub delta: DMatrix<f64>,
    /// `‖Δ‖_F / ε`.
    pub ratio: f64,
}

/// Stationary covariance of the shifted loop and its offset from `Σ`.
pub fn covariance_gap(
    plant: &Plant,
    k1_eps: &DMatrix<f64>,
    k2_eps: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    epsilon: f64,
) -> Result<CovarianceGap> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidOption(format!("epsilon must be positive, got {epsilon}")));
    }
    let acl = plant.closed_loop(k1_eps, k2_eps);
    let sigma_eps = numkit::solve_lyapunov(&acl, &plant.noise())?;
    let delta = sigma - &sigma_eps;
    let min_eigenvalue = numkit::min_eigenvalue(&delta);
    if min_eigenvalue < -1e-10 * sigma.norm().max(1.0) {
        return Err(Error::NotPositiveSemidefinite {
            name: "covariance gap".into(),
            min_eigenvalue,
        });
    }
    Ok(CovarianceGap {
        epsilon,
        ratio: delta.norm() / epsilon,
        sigma_eps,
        delta,
    })
}

/// Regularizes the stationary gains at each `ε` and returns the gaps.
pub fn gap_sweep(problem: &StationaryProblem, solution: &StationarySolution, epsilons: &[f64]) -> Result<Vec<CovarianceGap>> {
    epsilons
        .par_iter()
        .map(|&eps| {
            let r = epsilon_regularize(&problem.plant, &solution.k1, &solution.k2, &problem.sigma, eps)?;
            covariance_gap(&problem.plant, &r.k1, &r.k2, &problem.sigma, eps)
        })
        .collect()
}

/// Drift of the stationary game Riccati flow started at `P` with running
/// cost `Q_out`: `max_t ‖X(t) − P‖_F` over `[0, horizon]`.
pub fn riccati_fixed_point_drift(
    plant: &Plant,
    solution: &StationarySolution,
    horizon: f64,
    steps: usize,
) -> Result<f64> {
    let grid = TimeGrid::new(0.0, horizon, steps)?;
    let x = game::integrate_game_riccati(plant, &solution.q_out, &solution.p, &grid)?;
    Ok(x.values
        .iter()
        .map(|xk| (xk - &solution.p).norm())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheckOptions {
    /// Stop when `‖field‖ ≤ tol·max(1, ‖field(0)‖)`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for CrossCheckOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheck {
    pub p: DMatrix<f64>,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub field_norm: f64,
    pub iterations: usize,
}

/// Extragradient on the single-node stationary Lagrangian (Y1 descent,
/// Y2 and P ascent). The raw field is affine, `F(z) = Mz + b`, but need not
/// be monotone when player 2 is present, so the iteration runs on
/// `Mᵀ(Mz + b)`, which is monotone and has the same zeros.
pub fn extragradient_cross_check(problem: &StationaryProblem, opts: &CrossCheckOptions) -> Result<CrossCheck> {
    let problem = problem.prepared()?;
    let plant = &problem.plant;
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    let si = numkit::sym_inverse(&problem.sigma)?;
    let w = lyapunov_offset(plant, &problem.sigma);
    let dim = (m + p) * n + numkit::sym_dim(n);
    let field = |z: &DVector<f64>| minimax::stationary_node_field(plant, &si, &w, z);

    let b = field(&DVector::zeros(dim));
    let mut mat = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        mat.set_column(j, &(field(&e) - &b));
    }
    let normal = mat.transpose() * &mat;
    let lipschitz = normal.symmetric_eigenvalues().max();
    if !(lipschitz > 0.0) {
        return Err(Error::SingularKkt { residual: b.norm() });
    }
    let eta = 0.9 / lipschitz;
    let monotone = |z: &DVector<f64>| mat.transpose() * (&mat * z + &b);

    let target = opts.tol * b.norm().max(1.0);
    let mut z = DVector::zeros(dim);
    let mut iterations = opts.max_iters;
    for iter in 0..opts.max_iters {
        let g = monotone(&z);
        if g.norm() <= target * lipschitz.sqrt() && (&mat * &z + &b).norm() <= target {
            iterations = iter;
            break;
        }
        let predictor = &z - &g * eta;
        z -= monotone(&predictor) * eta;
    }
    let field_norm = (&mat * &z + &b).norm();
    if field_norm > target.max(1e-9 * b.norm().max(1.0)) {
        return Err(Error::NoConvergence {
            best_residual: field_norm,
            iterations,
        });
    }
    let s = z.as_slice();
    let y1 = DMatrix::from_column_slice(m, n, &s[..m * n]);
    let y2 = DMatrix::from_column_slice(p, n, &s[m * n..(m + p) * n]);
    Ok(CrossCheck {
        p: SymVec(DVector::from_column_slice(&s[(m + p) * n..])).unpack(n),
        k1: &y1 * &si,
        k2: &y2 * &si,
        field_norm,
        iterations,
    })
}
