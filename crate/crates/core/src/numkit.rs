//! Dense numerical kernel shared by every solver: fixed-step matrix ODE
//! integration, Lyapunov-type linear solves, spectral tests and the packed
//! symmetric-matrix coordinates used for Newton unknowns and residuals.
//!
//! Everything here targets small state dimensions (n ≤ ~10); the linear
//! matrix equations are solved through their dense vectorizations.

use nalgebra::{Cholesky, DMatrix, DVector, Schur, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Relative threshold used for numerical rank decisions.
pub const RANK_RTOL: f64 = 1e-12;

/// Uniform grid `t_k = t0 + k (t1 - t0) / steps`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidOption(format!(
                "time grid needs finite t1 > t0, got [{t0}, {t1}]"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidOption("time grid needs at least one step".into()));
        }
        Ok(Self { t0, t1, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t1
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.node(k))
    }

    /// Same interval with a different step count.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Self::new(self.t0, self.t1, steps)
    }
}

/// One matrix per grid node. Holds symmetric trajectories (Π, Σ, H) as
/// well as rectangular gain schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTrajectory {
    pub grid: TimeGrid,
    pub values: Vec<DMatrix<f64>>,
}

impl MatrixTrajectory {
    pub fn new(grid: TimeGrid, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "trajectory has {} values for {} grid nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn first(&self) -> &DMatrix<f64> {
        &self.values[0]
    }

    pub fn last(&self) -> &DMatrix<f64> {
        &self.values[self.values.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &DMatrix<f64>)> {
        self.grid.nodes().zip(self.values.iter())
    }

    pub fn map<F>(&self, f: F) -> MatrixTrajectory
    where
        F: FnMut(&DMatrix<f64>) -> DMatrix<f64>,
    {
        MatrixTrajectory {
            grid: self.grid,
            values: self.values.iter().map(f).collect(),
        }
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let steps = self.grid.steps;
        let x = ((t - self.grid.t0) / self.grid.dt()).clamp(0.0, steps as f64);
        let k = (x.floor() as usize).min(steps - 1);
        (k, x - k as f64)
    }

    /// Piecewise-linear interpolation, clamped to the grid interval.
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let (k, frac) = self.locate(t);
        if frac == 0.0 {
            return self.values[k].clone();
        }
        &self.values[k] * (1.0 - frac) + &self.values[k + 1] * frac
    }

    /// Four-point Lagrange interpolation (fourth-order accurate for smooth
    /// data). Reproduces node values exactly; falls back to linear on grids
    /// with fewer than four nodes.
    pub fn cubic_at(&self, t: f64) -> DMatrix<f64> {
        let steps = self.grid.steps;
        if steps < 3 {
            return self.at(t);
        }
        let (k, frac) = self.locate(t);
        if frac == 0.0 {
            return self.values[k].clone();
        }
        let start = k.saturating_sub(1).min(steps - 3);
        let x = k as f64 + frac;
        let mut out = DMatrix::zeros(self.values[0].nrows(), self.values[0].ncols());
        for i in 0..4 {
            let xi = (start + i) as f64;
            let mut w = 1.0;
            for l in 0..4 {
                if l != i {
                    let xl = (start + l) as f64;
                    w *= (x - xl) / (xi - xl);
                }
            }
            out += &self.values[start + i] * w;
        }
        out
    }
}

/// Integration direction on a [`TimeGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Classical RK4 on a fixed grid for a symmetric matrix state.
///
/// `initial` is the value at `t0` (forward) or `t1` (backward). The returned
/// trajectory is always ordered by increasing time. Each node is
/// symmetrized after its step. Fails with [`Error::BlowUp`] at the first
/// node whose Frobenius norm exceeds `blowup_threshold` or is not finite.
pub fn integrate_matrix_ode<F>(
    mut rhs: F,
    initial: &DMatrix<f64>,
    grid: &TimeGrid,
    direction: Direction,
    blowup_threshold: f64,
) -> Result<MatrixTrajectory>
where
    F: FnMut(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let steps = grid.steps();
    let (h, mut t) = match direction {
        Direction::Forward => (grid.dt(), grid.t0()),
        Direction::Backward => (-grid.dt(), grid.t1()),
    };
    let check = |x: &DMatrix<f64>, t: f64| -> Result<()> {
        let norm = x.norm();
        if !norm.is_finite() || norm > blowup_threshold {
            Err(Error::BlowUp { t })
        } else {
            Ok(())
        }
    };

    let mut x = symmetrize(initial);
    check(&x, t)?;
    let mut values = Vec::with_capacity(steps + 1);
    values.push(x.clone());
    for step in 1..=steps {
        let k1 = rhs(t, &x);
        let k2 = rhs(t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
        let k3 = rhs(t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
        let k4 = rhs(t + h, &(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        x = symmetrize(&x);
        t = match direction {
            Direction::Forward => grid.node(step),
            Direction::Backward => grid.node(steps - step),
        };
        check(&x, t)?;
        values.push(x.clone());
    }
    if direction == Direction::Backward {
        values.reverse();
    }
    Ok(MatrixTrajectory { grid: *grid, values })
}

/// `(X + X') / 2`.
pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// `‖X − X'‖_F / ‖X‖_F` (zero for the zero matrix).
pub fn relative_asymmetry(x: &DMatrix<f64>) -> f64 {
    let norm = x.norm();
    if norm == 0.0 {
        0.0
    } else {
        (x - x.transpose()).norm() / norm
    }
}

pub fn min_eigenvalue(x: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(x)).eigenvalues.min()
}

/// Eigenvalues of the symmetric part clamped from below at `floor`.
pub fn clamp_eigenvalues(x: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(x));
    if eig.eigenvalues.min() >= floor {
        return symmetrize(x);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()))
}

/// Symmetric square root of a PSD matrix.
pub fn sym_sqrt(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(x));
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.min() < -1e-12 * scale {
        return Err(Error::NotPositiveSemidefinite {
            name: "matrix".into(),
            min_eigenvalue: eig.eigenvalues.min(),
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(symmetrize(
        &(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()),
    ))
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky
/// factor.
pub fn sym_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(x);
    match Cholesky::new(sym.clone()) {
        Some(chol) => Ok(symmetrize(&chol.inverse())),
        None => Err(Error::NotPositiveDefinite {
            name: "matrix".into(),
            min_eigenvalue: min_eigenvalue(&sym),
        }),
    }
}

/// Numerical rank: singular values above `rows · σmax · 1e-12`.
pub fn numerical_rank(x: &DMatrix<f64>) -> usize {
    if x.nrows() == 0 || x.ncols() == 0 {
        return 0;
    }
    let sv = SVD::new(x.clone(), false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let tol = x.nrows() as f64 * smax * RANK_RTOL;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Spectral abscissa test. Returns `(stable, margin)` with
/// `margin = −max Re λ(A)`; margins within round-off of zero are reported
/// as exactly zero.
pub fn is_hurwitz(a: &DMatrix<f64>) -> (bool, f64) {
    if a.nrows() == 0 {
        return (true, f64::INFINITY);
    }
    let eig = Schur::new(a.clone()).complex_eigenvalues();
    let max_re = eig.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let mut margin = -max_re;
    if margin.abs() <= 1e-12 * a.norm().max(1.0) {
        margin = 0.0;
    }
    (margin > 0.0, margin)
}

/// Solves `Acl·X + X·Acl' + RHS = 0` through the n²-dimensional Kronecker
/// system.
pub fn solve_lyapunov(acl: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = acl.nrows();
    if acl.ncols() != n || rhs.nrows() != n || rhs.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Lyapunov solve needs square operands of equal size, got {}x{} and {}x{}",
            acl.nrows(),
            acl.ncols(),
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(acl) + acl.kronecker(&eye);
    let sv = SVD::new(op.clone(), false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 || sv.min() <= (n * n) as f64 * smax * RANK_RTOL {
        return Err(Error::SingularOperator);
    }
    let b = DVector::from_column_slice((-rhs).as_slice());
    let x = op
        .full_piv_lu()
        .solve(&b)
        .ok_or(Error::SingularOperator)?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

/// Result of [`solve_bilateral_sym`].
#[derive(Debug, Clone)]
pub struct BilateralSolution {
    pub p: DMatrix<f64>,
    /// `‖D·P·S + S·P·D − W‖_F`.
    pub residual: f64,
    /// Operator rank deficient; `p` is the minimum-norm least-squares solution.
    pub singular: bool,
    pub rank: usize,
}

/// Solves `D·P·S + S·P·D = W` for symmetric `P` in packed coordinates.
pub fn solve_bilateral_sym(
    d: &DMatrix<f64>,
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<BilateralSolution> {
    let n = d.nrows();
    for (name, m) in [("D", d), ("S", s), ("W", w)] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "{name} must be {n}x{n}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    let dim = sym_dim(n);
    let mut op = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        let mut e = DVector::zeros(dim);
        e[col] = 1.0;
        let basis = SymVec(e).unpack(n);
        let image = d * &basis * s + s * &basis * d;
        op.set_column(col, &SymVec::pack(&image).0);
    }
    let rhs = SymVec::pack(&symmetrize(w)).0;
    let svd = SVD::new(op, true, true);
    let smax = svd.singular_values.max();
    let tol = if smax == 0.0 {
        f64::MIN_POSITIVE
    } else {
        dim as f64 * smax * RANK_RTOL
    };
    let rank = svd.singular_values.iter().filter(|&&v| v > tol).count();
    let x = if rank == 0 {
        DVector::zeros(dim)
    } else {
        svd.solve(&rhs, tol)
            .map_err(|e| Error::InvalidOption(e.to_string()))?
    };
    let p = SymVec(x).unpack(n);
    let residual = (d * &p * s + s * &p * d - w).norm();
    Ok(BilateralSolution {
        p,
        residual,
        singular: rank < dim,
        rank,
    })
}

/// Composite trapezoid rule for `∫ tr(weight(t)·X(t)) dt` on the
/// trajectory grid.
pub fn trapezoid_trace_integral<F>(traj: &MatrixTrajectory, mut weight: F) -> f64
where
    F: FnMut(f64) -> DMatrix<f64>,
{
    let h = traj.grid.dt();
    let last = traj.len() - 1;
    traj.iter()
        .enumerate()
        .map(|(k, (t, x))| {
            let w = if k == 0 || k == last { 0.5 * h } else { h };
            w * (weight(t) * x).trace()
        })
        .sum()
}

/// Estimated error bound of the composite trapezoid rule on uniformly
/// spaced `samples`: `(b − a)·h²/12 · max|f''|`, with `f''` taken from
/// second differences.
pub fn trapezoid_error_bound(samples: &[f64], h: f64) -> f64 {
    if samples.len() < 3 {
        return 0.0;
    }
    let max_curv = samples
        .windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]).abs() / (h * h))
        .fold(0.0, f64::max);
    let span = h * (samples.len() - 1) as f64;
    span * h * h / 12.0 * max_curv
}

/// Packed dimension `n(n+1)/2`.
pub fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed upper triangle of a symmetric matrix with off-diagonal entries
/// scaled by √2, so that the Euclidean norm equals the Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SymVec(pub DVector<f64>);

impl SymVec {
    pub fn pack(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let mut v = DVector::zeros(sym_dim(n));
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                v[idx] = if i == j {
                    x[(i, i)]
                } else {
                    std::f64::consts::SQRT_2 * 0.5 * (x[(i, j)] + x[(j, i)])
                };
                idx += 1;
            }
        }
        SymVec(v)
    }

    pub fn unpack(&self, n: usize) -> DMatrix<f64> {
        assert_eq!(self.0.len(), sym_dim(n), "packed length does not match n");
        let mut x = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                if i == j {
                    x[(i, i)] = self.0[idx];
                } else {
                    let v = self.0[idx] / std::f64::consts::SQRT_2;
                    x[(i, j)] = v;
                    x[(j, i)] = v;
                }
                idx += 1;
            }
        }
        x
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn zero_rhs_gives_constant_trajectory() {
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        let traj = integrate_matrix_ode(
            |_, x| DMatrix::zeros(x.nrows(), x.ncols()),
            &eye,
            &grid,
            Direction::Forward,
            1e8,
        )
        .unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.values.iter().all(|x| *x == eye));
    }

    fn riccati_oracle_error(steps: usize) -> f64 {
        // x' = x², x(1) = 1  =>  x(t) = 1 / (2 − t)
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let traj = integrate_matrix_ode(
            |_, x| x * x,
            &scalar(1.0),
            &grid,
            Direction::Backward,
            1e8,
        )
        .unwrap();
        traj.iter()
            .map(|(t, x)| (x[(0, 0)] - 1.0 / (2.0 - t)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn backward_scalar_riccati_matches_analytic() {
        let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let traj = integrate_matrix_ode(
            |_, x| x * x,
            &scalar(1.0),
            &grid,
            Direction::Backward,
            1e8,
        )
        .unwrap();
        assert!((traj.first()[(0, 0)] - 0.5).abs() < 1e-9);
        assert_eq!(traj.last()[(0, 0)], 1.0);
    }

    #[test]
    fn rk4_error_shrinks_sixteenfold() {
        let ratio = riccati_oracle_error(20) / riccati_oracle_error(40);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn tangent_escape_is_detected() {
        // x' = x² + 1 backward from x(2) = 0 is tan(t − 2): escape at 2 − π/2.
        let grid = TimeGrid::new(0.0, 2.0, 200).unwrap();
        let err = integrate_matrix_ode(
            |_, x| x * x + scalar(1.0),
            &scalar(0.0),
            &grid,
            Direction::Backward,
            1e8,
        )
        .unwrap_err();
        let escape = 2.0 - std::f64::consts::FRAC_PI_2;
        match err {
            Error::BlowUp { t } => assert!(t < escape + 1e-9 && t > escape - 0.05, "t = {t}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lyapunov_examples() {
        let x = solve_lyapunov(&(-DMatrix::identity(2, 2)), &DMatrix::identity(2, 2)).unwrap();
        assert!((x - DMatrix::identity(2, 2) * 0.5).norm() < 1e-14);
        let x = solve_lyapunov(&scalar(-1.0), &scalar(1.0)).unwrap();
        assert!((x[(0, 0)] - 0.5).abs() < 1e-15);
        let nilpotent = dmatrix![0.0, 1.0; 0.0, 0.0];
        assert!(matches!(
            solve_lyapunov(&nilpotent, &DMatrix::identity(2, 2)),
            Err(Error::SingularOperator)
        ));
    }

    #[test]
    fn lyapunov_residual_and_psd() {
        let a = dmatrix![-1.0, 2.0, 0.3; 0.0, -0.5, 1.0; 0.2, -0.1, -2.0];
        let rhs = dmatrix![1.0, 0.2, 0.0; 0.2, 0.5, 0.1; 0.0, 0.1, 0.3];
        let x = solve_lyapunov(&a, &rhs).unwrap();
        let res = (&a * &x + &x * a.transpose() + &rhs).norm();
        assert!(res <= 1e-10 * (a.norm() * x.norm() + rhs.norm()));
        assert!(relative_asymmetry(&x) < 1e-12);
        assert!(min_eigenvalue(&x) >= -1e-10 * x.norm());
    }

    #[test]
    fn bilateral_examples() {
        let sol = solve_bilateral_sym(&scalar(1.0), &scalar(0.5), &scalar(1.0)).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(!sol.singular);

        let w = dmatrix![1.0, 0.5; 0.5, 2.0];
        let sol = solve_bilateral_sym(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), &w).unwrap();
        assert!(sol.singular);
        assert_eq!(sol.p, DMatrix::zeros(2, 2));
        assert!((sol.residual - w.norm()).abs() < 1e-14);

        let eye = DMatrix::<f64>::identity(2, 2);
        let sol = solve_bilateral_sym(&eye, &eye, &(&eye * 2.0)).unwrap();
        assert!((sol.p - eye).norm() < 1e-14);
    }

    #[test]
    fn hurwitz_examples() {
        assert_eq!(is_hurwitz(&scalar(-1.0)), (true, 1.0));
        assert_eq!(is_hurwitz(&dmatrix![0.0, 1.0; -1.0, 0.0]), (false, 0.0));
        let (stable, margin) = is_hurwitz(&dmatrix![-1.0, 10.0; 0.0, -2.0]);
        assert!(stable);
        assert!((margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_examples() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((sym_inverse(&eye).unwrap() - &eye).norm() < 1e-15);
        let inv = sym_inverse(&dmatrix![2.0, 0.0; 0.0, 4.0]).unwrap();
        assert!((inv - dmatrix![0.5, 0.0; 0.0, 0.25]).norm() < 1e-15);
        assert!((sym_inverse(&scalar(0.5)).unwrap()[(0, 0)] - 2.0).abs() < 1e-15);
        assert!(matches!(
            sym_inverse(&dmatrix![1.0, 0.0; 0.0, -0.1]),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn trapezoid_examples() {
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let eye = DMatrix::<f64>::identity(3, 3);
        let traj = MatrixTrajectory::new(grid, vec![eye.clone(); 11]).unwrap();
        let v = trapezoid_trace_integral(&traj, |_| eye.clone());
        assert!((v - 3.0).abs() < 1e-14);
        assert_eq!(trapezoid_trace_integral(&traj, |_| DMatrix::zeros(3, 3)), 0.0);

        let lin = MatrixTrajectory::new(grid, grid.nodes().map(|t| scalar(1.0 + t)).collect()).unwrap();
        let v = trapezoid_trace_integral(&lin, |_| scalar(1.0));
        assert!((v - 1.5).abs() < 1e-14);
    }

    #[test]
    fn cubic_interpolation_is_exact_for_cubics() {
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let f = |t: f64| 1.0 - 2.0 * t + 0.5 * t * t + 3.0 * t * t * t;
        let traj = MatrixTrajectory::new(grid, grid.nodes().map(|t| scalar(f(t))).collect()).unwrap();
        for t in [0.01, 0.0625, 0.33, 0.5, 0.97] {
            assert!((traj.cubic_at(t)[(0, 0)] - f(t)).abs() < 1e-13);
        }
        assert_eq!(traj.at(0.0625)[(0, 0)], 0.5 * (f(0.0) + f(0.125)));
    }

    #[test]
    fn rank_of_controllability_matrices() {
        assert_eq!(numerical_rank(&dmatrix![1.0, 1.0; 0.0, 0.0]), 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(2, 3)), 0);
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3)), 3);
    }

    fn random_symmetric(n: usize, entries: &[f64]) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |i, j| entries[i * n + j]);
        symmetrize(&m)
    }

    proptest! {
        #[test]
        fn symvec_is_an_isometry(n in 1usize..6, entries in prop::collection::vec(-10.0f64..10.0, 36)) {
            let x = random_symmetric(n, &entries);
            let v = SymVec::pack(&x);
            prop_assert!((v.norm() - x.norm()).abs() <= 1e-13 * (1.0 + x.norm()));
            prop_assert!((v.unpack(n) - &x).norm() <= 1e-14 * (1.0 + x.norm()));
        }

        #[test]
        fn symvec_preserves_inner_product(n in 1usize..5,
            a in prop::collection::vec(-3.0f64..3.0, 25),
            b in prop::collection::vec(-3.0f64..3.0, 25)) {
            let x = random_symmetric(n, &a);
            let y = random_symmetric(n, &b);
            let lhs = SymVec::pack(&x).0.dot(&SymVec::pack(&y).0);
            let rhs = (&x * &y).trace();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + x.norm() * y.norm()));
        }
    }

    #[test]
    fn symvec_isometry_on_thousand_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(1..7);
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-5.0..5.0));
            let x = symmetrize(&m);
            assert!((SymVec::pack(&x).norm() - x.norm()).abs() <= 1e-13 * x.norm().max(1.0));
        }
    }
}
