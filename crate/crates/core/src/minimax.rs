//! Time-discretized convex-concave formulation of the steering game,
//! solved by extragradient as an independent check on shooting.
//!
//! Decision variables are `Y1_k = K1Σ_k` (minimizer) and `Y2_k = K2Σ_k`
//! (maximizer) at every grid node. The covariance nodes follow from the
//! trapezoidal (Crank–Nicolson) covariance recursion
//!
//! `(I − h/2·𝒜)Σ_{k+1} = (I + h/2·𝒜)Σ_k + h/2·(ℬ(Y_k) + ℬ(Y_{k+1})) + h·CC'`
//!
//! with `𝒜(X) = AX + XA'` and `ℬ(Y) = B1Y1 + Y1'B1' + B2Y2 + Y2'B2'`. The
//! terminal condition `Σ_M = ΣT` carries a multiplier `Λ`, iterated as an
//! ascent block. The schur-complement variables are eliminated, so the
//! running cost is `tr(QΣ + Y1Σ⁻¹Y1' − Y2Σ⁻¹Y2')` with trapezoid weights.
//!
//! Gradients come from a discrete adjoint. The step multipliers `P_k`
//! (k = 1..M) approximate `Π` at the step midpoints; node values are
//! their averages, extrapolated half a step at either end.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{FiniteHorizonProblem, Plant};
use crate::numkit::{self, MatrixTrajectory, SymVec, TimeGrid};
use crate::steering::IncentiveSolution;

#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxOptions {
    pub step: f64,
    /// Defaults to `1e-6·‖Σ0‖_F`.
    pub sigma_floor: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for MinimaxOptions {
    fn default() -> Self {
        Self {
            step: 0.05,
            sigma_floor: None,
            tol: 1e-8,
            max_iters: 50_000,
        }
    }
}

/// Matrix map `X ↦ X + c·(MX + XM')` stored as its Kronecker matrix.
#[derive(Debug, Clone)]
struct ShiftedLyapunovMap {
    n: usize,
    matrix: DMatrix<f64>,
}

impl ShiftedLyapunovMap {
    fn new(m: &DMatrix<f64>, c: f64) -> Self {
        let n = m.nrows();
        let eye = DMatrix::<f64>::identity(n, n);
        let matrix = DMatrix::identity(n * n, n * n) + (eye.kronecker(m) + m.kronecker(&eye)) * c;
        Self { n, matrix }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let v = &self.matrix * DVector::from_column_slice(x.as_slice());
        numkit::symmetrize(&DMatrix::from_column_slice(self.n, self.n, v.as_slice()))
    }
}

#[derive(Debug, Clone)]
struct ShiftedLyapunovSolver {
    n: usize,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ShiftedLyapunovSolver {
    fn new(map: &ShiftedLyapunovMap) -> Result<Self> {
        let svd = map.matrix.clone().svd(false, false);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= smax * 1e-13 {
            return Err(Error::SingularOperator);
        }
        Ok(Self {
            n: map.n,
            lu: map.matrix.clone().lu(),
        })
    }

    fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let v = self
            .lu
            .solve(&DVector::from_column_slice(rhs.as_slice()))
            .expect("operator checked nonsingular");
        numkit::symmetrize(&DMatrix::from_column_slice(self.n, self.n, v.as_slice()))
    }
}

/// Decision variables of the reduced saddle problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleVariables {
    pub y1: Vec<DMatrix<f64>>,
    pub y2: Vec<DMatrix<f64>>,
    /// Terminal-constraint multiplier.
    pub lambda: DMatrix<f64>,
}

/// A point of the saddle iteration together with its derived trajectories.
#[derive(Debug, Clone)]
pub struct SaddleIterate {
    pub y1: Vec<DMatrix<f64>>,
    pub y2: Vec<DMatrix<f64>>,
    /// Covariance nodes from the recursion; `Σ_0 = Σ0`, and `Σ_M = ΣT`
    /// holds at convergence through the multiplier.
    pub sigma: MatrixTrajectory,
    pub pi_mult: MatrixTrajectory,
    pub lambda: DMatrix<f64>,
}

/// Outcome of [`extragradient_solve`].
#[derive(Debug, Clone)]
pub struct SaddleReport {
    pub field_norm: f64,
    /// `‖Σ_M − ΣT‖_F`.
    pub constraint_norm: f64,
    pub f_recovered: DMatrix<f64>,
    pub iterations: usize,
    pub iterate: SaddleIterate,
}

/// Lagrangian gradient blocks (unscaled) plus the adjoint it came from.
#[derive(Debug, Clone)]
pub struct LagrangianGradient {
    pub y1: Vec<DMatrix<f64>>,
    pub y2: Vec<DMatrix<f64>>,
    pub lambda: DMatrix<f64>,
    /// `P_1..P_M`, one per step.
    pub step_multipliers: Vec<DMatrix<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
}

/// Grid, weights and the precomputed linear maps of the trapezoidal recursion.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub plant: Plant,
    pub q: DMatrix<f64>,
    pub sigma0: DMatrix<f64>,
    pub sigma_t: DMatrix<f64>,
    pub grid: TimeGrid,
    pub weights: Vec<f64>,
    pub sigma_floor: f64,
    forward_rhs: ShiftedLyapunovMap,
    forward_lhs: ShiftedLyapunovSolver,
    adjoint_rhs: ShiftedLyapunovMap,
    adjoint_lhs: ShiftedLyapunovSolver,
}

pub fn discretize(problem: &FiniteHorizonProblem, sigma_floor: Option<f64>) -> Result<Discretization> {
    // A single-step recursion is meaningful here, so the problem's
    // grid-size rule is checked on a stand-in count.
    let problem = FiniteHorizonProblem {
        grid_steps: problem.grid_steps,
        ..problem.with_grid_steps(problem.grid_steps.max(2)).prepared()?
    };
    let grid = problem.grid()?;
    let h = grid.dt();
    let m = grid.steps();
    let mut weights = vec![h; m + 1];
    weights[0] = h / 2.0;
    weights[m] = h / 2.0;
    let a = &problem.plant.a;
    let at = a.transpose();
    let forward_lhs = ShiftedLyapunovSolver::new(&ShiftedLyapunovMap::new(a, -h / 2.0))?;
    let adjoint_lhs = ShiftedLyapunovSolver::new(&ShiftedLyapunovMap::new(&at, -h / 2.0))?;
    let sigma_floor = sigma_floor.unwrap_or(1e-6 * problem.sigma0.norm());
    if !(sigma_floor > 0.0) {
        return Err(Error::InvalidOption("sigma_floor must be positive".into()));
    }
    Ok(Discretization {
        forward_rhs: ShiftedLyapunovMap::new(a, h / 2.0),
        adjoint_rhs: ShiftedLyapunovMap::new(&at, h / 2.0),
        forward_lhs,
        adjoint_lhs,
        plant: problem.plant,
        q: problem.q,
        sigma0: problem.sigma0,
        sigma_t: problem.sigma_t,
        grid,
        weights,
        sigma_floor,
    })
}

fn input_term(plant: &Plant, y1: &DMatrix<f64>, y2: &DMatrix<f64>) -> DMatrix<f64> {
    let t = &plant.b1 * y1 + &plant.b2 * y2;
    &t + t.transpose()
}

/// `tr(Y Σ⁻¹ Y')` and its Σ-gradient `−Σ⁻¹Y'YΣ⁻¹`.
pub fn quadratic_over_linear(y: &DMatrix<f64>, sigma_inv: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let ysi = y * sigma_inv;
    ((&ysi * y.transpose()).trace(), -(ysi.transpose() * &ysi))
}

impl Discretization {
    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn zero_variables(&self) -> SaddleVariables {
        let (n, m, p) = (self.plant.n(), self.plant.m(), self.plant.p());
        let k = self.steps() + 1;
        SaddleVariables {
            y1: vec![DMatrix::zeros(m, n); k],
            y2: vec![DMatrix::zeros(p, n); k],
            lambda: DMatrix::zeros(n, n),
        }
    }

    /// Covariance nodes generated by the recursion from `Σ0`.
    pub fn forward(&self, y1: &[DMatrix<f64>], y2: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let h = self.grid.dt();
        let noise = self.plant.noise() * h;
        let mut sigma = Vec::with_capacity(self.steps() + 1);
        sigma.push(self.sigma0.clone());
        let mut b_prev = input_term(&self.plant, &y1[0], &y2[0]);
        for k in 0..self.steps() {
            let b_next = input_term(&self.plant, &y1[k + 1], &y2[k + 1]);
            let rhs = self.forward_rhs.apply(&sigma[k]) + (&b_prev + &b_next) * (h / 2.0) + &noise;
            sigma.push(self.forward_lhs.solve(&rhs));
            b_prev = b_next;
        }
        sigma
    }

    /// Per-step residuals of the recursion for arbitrary covariance nodes.
    pub fn constraint_residuals(
        &self,
        sigma: &[DMatrix<f64>],
        y1: &[DMatrix<f64>],
        y2: &[DMatrix<f64>],
    ) -> Vec<DMatrix<f64>> {
        let h = self.grid.dt();
        let lhs = ShiftedLyapunovMap::new(&self.plant.a, -h / 2.0);
        let noise = self.plant.noise() * h;
        (0..self.steps())
            .map(|k| {
                lhs.apply(&sigma[k + 1])
                    - self.forward_rhs.apply(&sigma[k])
                    - (input_term(&self.plant, &y1[k], &y2[k]) + input_term(&self.plant, &y1[k + 1], &y2[k + 1]))
                        * (h / 2.0)
                    - &noise
            })
            .collect()
    }

    fn floored(&self, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        if numkit::min_eigenvalue(sigma) >= self.sigma_floor {
            sigma.clone()
        } else {
            numkit::clamp_eigenvalues(sigma, self.sigma_floor)
        }
    }

    /// `tr(QΣ + Y1Σ⁻¹Y1' − Y2Σ⁻¹Y2')` at one node (Σ floored).
    pub fn node_cost(&self, sigma: &DMatrix<f64>, y1: &DMatrix<f64>, y2: &DMatrix<f64>) -> f64 {
        let s = self.floored(sigma);
        let si = numkit::sym_inverse(&s).expect("floored covariance is positive definite");
        (&self.q * &s).trace() + quadratic_over_linear(y1, &si).0 - quadratic_over_linear(y2, &si).0
    }

    /// Trapezoid-weighted running cost for given nodes.
    pub fn cost(&self, sigma: &[DMatrix<f64>], y1: &[DMatrix<f64>], y2: &[DMatrix<f64>]) -> f64 {
        (0..=self.steps())
            .map(|k| self.weights[k] * self.node_cost(&sigma[k], &y1[k], &y2[k]))
            .sum()
    }

    /// Reduced Lagrangian `cost(Σ(Y), Y) + ⟨Λ, Σ_M(Y) − ΣT⟩`.
    pub fn lagrangian(&self, vars: &SaddleVariables) -> f64 {
        let sigma = self.forward(&vars.y1, &vars.y2);
        let last = sigma.last().expect("grid has nodes");
        self.cost(&sigma, &vars.y1, &vars.y2) + vars.lambda.dot(&(last - &self.sigma_t))
    }

    pub fn gradient(&self, vars: &SaddleVariables) -> LagrangianGradient {
        let m = self.steps();
        let h = self.grid.dt();
        let sigma = self.forward(&vars.y1, &vars.y2);

        // Node-local pieces: Σ⁻¹, Γ_k = ∂c/∂Σ, and the Y-gradients of c.
        let local: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = (0..=m)
            .into_par_iter()
            .map(|k| {
                let s = self.floored(&sigma[k]);
                let si = numkit::sym_inverse(&s).expect("floored covariance is positive definite");
                let (_, g1) = quadratic_over_linear(&vars.y1[k], &si);
                let (_, g2) = quadratic_over_linear(&vars.y2[k], &si);
                let gamma = &self.q + g1 - g2;
                let dy1 = &vars.y1[k] * &si * (2.0 * self.weights[k]);
                let dy2 = &vars.y2[k] * &si * (-2.0 * self.weights[k]);
                (gamma, dy1, dy2)
            })
            .collect();

        // Adjoint sweep, P[k] for k = 1..=m stored at index k − 1.
        let mut p = vec![DMatrix::zeros(0, 0); m];
        p[m - 1] = self
            .adjoint_lhs
            .solve(&(&vars.lambda + &local[m].0 * self.weights[m]));
        for k in (1..m).rev() {
            let rhs = self.adjoint_rhs.apply(&p[k]) + &local[k].0 * self.weights[k];
            p[k - 1] = self.adjoint_lhs.solve(&rhs);
        }

        let b1t = self.plant.b1.transpose();
        let b2t = self.plant.b2.transpose();
        let (y1, y2): (Vec<_>, Vec<_>) = (0..=m)
            .into_par_iter()
            .map(|k| {
                let mut adj = DMatrix::zeros(self.plant.n(), self.plant.n());
                if k >= 1 {
                    adj += &p[k - 1];
                }
                if k < m {
                    adj += &p[k];
                }
                let (_, dy1, dy2) = &local[k];
                (dy1 + &b1t * &adj * h, dy2 + &b2t * &adj * h)
            })
            .unzip();

        LagrangianGradient {
            y1,
            y2,
            lambda: &sigma[m] - &self.sigma_t,
            step_multipliers: p,
            sigma,
        }
    }

    /// Node values of the dynamics multiplier.
    pub fn pi_mult(&self, step_multipliers: &[DMatrix<f64>]) -> MatrixTrajectory {
        let p = step_multipliers;
        let m = p.len();
        let values = (0..=m)
            .map(|k| {
                if m == 1 {
                    p[0].clone()
                } else if k == 0 {
                    &p[0] * 1.5 - &p[1] * 0.5
                } else if k == m {
                    &p[m - 1] * 1.5 - &p[m - 2] * 0.5
                } else {
                    (&p[k - 1] + &p[k]) * 0.5
                }
            })
            .collect();
        MatrixTrajectory::new(self.grid, values).expect("one value per node")
    }

    fn dim(&self) -> usize {
        let (n, m, p) = (self.plant.n(), self.plant.m(), self.plant.p());
        (self.steps() + 1) * n * (m + p) + numkit::sym_dim(n)
    }

    pub fn pack(&self, vars: &SaddleVariables) -> DVector<f64> {
        let mut z = Vec::with_capacity(self.dim());
        for y in vars.y1.iter().chain(&vars.y2) {
            z.extend_from_slice(y.as_slice());
        }
        z.extend_from_slice(SymVec::pack(&vars.lambda).0.as_slice());
        DVector::from_vec(z)
    }

    pub fn unpack(&self, z: &DVector<f64>) -> SaddleVariables {
        let (n, m, p) = (self.plant.n(), self.plant.m(), self.plant.p());
        let nodes = self.steps() + 1;
        let mut off = 0;
        let mut take = |rows: usize| {
            let block = DMatrix::from_column_slice(rows, n, &z.as_slice()[off..off + rows * n]);
            off += rows * n;
            block
        };
        let y1 = (0..nodes).map(|_| take(m)).collect();
        let y2 = (0..nodes).map(|_| take(p)).collect();
        let lambda = SymVec(DVector::from_column_slice(&z.as_slice()[off..])).unpack(n);
        SaddleVariables { y1, y2, lambda }
    }

    /// First-order field: `∇Y1/h` (descent), `−∇Y2/h` (ascent), and
    /// `−∇Λ` packed (ascent).
    pub fn kkt_field(&self, vars: &SaddleVariables) -> DVector<f64> {
        let g = self.gradient(vars);
        let h = self.grid.dt();
        let scaled = SaddleVariables {
            y1: g.y1.iter().map(|x| x / h).collect(),
            y2: g.y2.iter().map(|x| -x / h).collect(),
            lambda: -g.lambda,
        };
        self.pack(&scaled)
    }

    pub fn iterate(&self, vars: &SaddleVariables) -> SaddleIterate {
        let g = self.gradient(vars);
        SaddleIterate {
            y1: vars.y1.clone(),
            y2: vars.y2.clone(),
            sigma: MatrixTrajectory::new(self.grid, g.sigma).expect("one value per node"),
            pi_mult: self.pi_mult(&g.step_multipliers),
            lambda: vars.lambda.clone(),
        }
    }

    /// Variables built from a shooting solution on the same grid. The
    /// gains pair each node with the half-step values of `Π` that the
    /// discrete stationarity conditions see, and `Λ` makes the last step
    /// multiplier equal `Π(T − h/2)`.
    pub fn warm_start(&self, solution: &IncentiveSolution) -> Result<SaddleVariables> {
        if solution.sigma.grid != self.grid {
            return Err(Error::DimensionMismatch("warm start needs the discretization grid".into()));
        }
        let m = self.steps();
        let h = self.grid.dt();
        let half: Vec<_> = (0..m)
            .map(|k| solution.pi.cubic_at(self.grid.node(k) + h / 2.0))
            .collect();
        let b1t = self.plant.b1.transpose();
        let b2t = self.plant.b2.transpose();
        let (y1, y2): (Vec<_>, Vec<_>) = (0..=m)
            .map(|k| {
                let mut adj = DMatrix::zeros(self.plant.n(), self.plant.n());
                if k >= 1 {
                    adj += &half[k - 1];
                }
                if k < m {
                    adj += &half[k];
                }
                let pi = adj * (h / (2.0 * self.weights[k]));
                let s = &solution.sigma.values[k];
                (-(&b1t * &pi * s), &b2t * &pi * s)
            })
            .unzip();
        let s = self.floored(&solution.sigma.values[m]);
        let si = numkit::sym_inverse(&s)?;
        let gamma = &self.q + quadratic_over_linear(&y1[m], &si).1 - quadratic_over_linear(&y2[m], &si).1;
        let lhs = ShiftedLyapunovMap::new(&self.plant.a.transpose(), -h / 2.0);
        let lambda = numkit::symmetrize(&(lhs.apply(&half[m - 1]) - gamma * self.weights[m]));
        Ok(SaddleVariables { y1, y2, lambda })
    }
}

fn report(disc: &Discretization, vars: &SaddleVariables, field_norm: f64, iterations: usize) -> SaddleReport {
    let iterate = disc.iterate(vars);
    SaddleReport {
        field_norm,
        constraint_norm: (iterate.sigma.last() - &disc.sigma_t).norm(),
        f_recovered: iterate.pi_mult.last().clone(),
        iterations,
        iterate,
    }
}

/// Extragradient from zero gains and multiplier.
pub fn extragradient_solve(problem: &FiniteHorizonProblem, opts: &MinimaxOptions) -> Result<SaddleReport> {
    let disc = discretize(problem, opts.sigma_floor)?;
    let start = disc.zero_variables();
    extragradient_run(&disc, opts, start)
}

/// Extragradient from given variables on an existing discretization.
pub fn extragradient_run(
    disc: &Discretization,
    opts: &MinimaxOptions,
    start: SaddleVariables,
) -> Result<SaddleReport> {
    if !(opts.step > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::InvalidOption("minimax step and tol must be positive".into()));
    }
    let field = |z: &DVector<f64>| disc.kkt_field(&disc.unpack(z));
    let mut z = disc.pack(&start);
    let mut f = field(&z);
    let mut norm = f.norm();
    if !norm.is_finite() {
        return Err(Error::NoConvergence {
            best_residual: norm,
            iterations: 0,
        });
    }
    let mut best = (norm, z.clone());
    let mut eta = opts.step;
    let mut increases = 0;
    for iter in 0..opts.max_iters {
        if norm <= opts.tol {
            let vars = disc.unpack(&z);
            let rep = report(disc, &vars, norm, iter);
            if rep.constraint_norm <= opts.tol {
                return Ok(rep);
            }
        }
        let predictor = &z - &f * eta;
        let fp = field(&predictor);
        let next = &z - &fp * eta;
        let fnext = field(&next);
        let nnext = fnext.norm();
        if !nnext.is_finite() {
            eta *= 0.5;
            z = best.1.clone();
            f = field(&z);
            norm = best.0;
            increases = 0;
            continue;
        }
        if nnext > norm {
            increases += 1;
            if increases >= 50 {
                eta *= 0.5;
                increases = 0;
                log::debug!("minimax: step halved to {eta} at iteration {iter}");
            }
        } else {
            increases = 0;
        }
        z = next;
        f = fnext;
        norm = nnext;
        if norm < best.0 {
            best = (norm, z.clone());
        }
    }
    if norm <= opts.tol {
        let rep = report(disc, &disc.unpack(&z), norm, opts.max_iters);
        if rep.constraint_norm <= opts.tol {
            return Ok(rep);
        }
    }
    Err(Error::NoConvergence {
        best_residual: best.0,
        iterations: opts.max_iters,
    })
}

/// Single-node stationary Lagrangian
/// `tr(Y1Σ⁻¹Y1' − Y2Σ⁻¹Y2') + ⟨P, AΣ + ΣA' + ℬ(Y) + CC'⟩`
/// and its gradient blocks `(∂Y1, ∂Y2, ∂P)`.
pub fn stationary_node_gradient(
    plant: &Plant,
    sigma_inv: &DMatrix<f64>,
    w: &DMatrix<f64>,
    y1: &DMatrix<f64>,
    y2: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let g1 = y1 * sigma_inv * 2.0 + plant.b1.transpose() * p * 2.0;
    let g2 = y2 * sigma_inv * -2.0 + plant.b2.transpose() * p * 2.0;
    let gp = w + input_term(plant, y1, y2);
    (g1, g2, gp)
}

/// Single-node field in the ordering of [`kkt_field`](Discretization::kkt_field):
/// Y1 descent, Y2 ascent, P ascent, flattened as `[Y1, Y2, pack(P)]`.
pub fn stationary_node_field(
    plant: &Plant,
    sigma_inv: &DMatrix<f64>,
    w: &DMatrix<f64>,
    z: &DVector<f64>,
) -> DVector<f64> {
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    let s = z.as_slice();
    let y1 = DMatrix::from_column_slice(m, n, &s[..m * n]);
    let y2 = DMatrix::from_column_slice(p, n, &s[m * n..(m + p) * n]);
    let pm = SymVec(DVector::from_column_slice(&s[(m + p) * n..])).unpack(n);
    let (g1, g2, gp) = stationary_node_gradient(plant, sigma_inv, w, &y1, &y2, &pm);
    let mut out = Vec::with_capacity(z.len());
    out.extend_from_slice(g1.as_slice());
    out.extend(g2.iter().map(|v| -v));
    out.extend(SymVec::pack(&numkit::symmetrize(&gp)).0.iter().map(|v| -v));
    DVector::from_vec(out)
}
