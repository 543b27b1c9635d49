//! Problem and solver-option types, well-posedness validation and the
//! scenario document schema.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{self, TimeGrid};

/// Relative Frobenius asymmetry accepted (and symmetrized away) on inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Controlled diffusion `dx = (Ax + B1 u + B2 v) dt + C dw`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl Plant {
    pub fn new(a: DMatrix<f64>, b1: DMatrix<f64>, b2: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let plant = Self { a, b1, b2, c };
        plant.check_dimensions()?;
        Ok(plant)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b1.ncols()
    }

    pub fn p(&self) -> usize {
        self.b2.ncols()
    }

    /// `B1 B1' − B2 B2'`, the sign-indefinite channel of the game Riccati
    /// equation.
    pub fn channel_difference(&self) -> DMatrix<f64> {
        &self.b1 * self.b1.transpose() - &self.b2 * self.b2.transpose()
    }

    /// `C C'`.
    pub fn noise(&self) -> DMatrix<f64> {
        &self.c * self.c.transpose()
    }

    /// `B = [B1 B2]`.
    pub fn input_stack(&self) -> DMatrix<f64> {
        let n = self.n();
        let (m, p) = (self.m(), self.p());
        let mut b = DMatrix::zeros(n, m + p);
        b.view_mut((0, 0), (n, m)).copy_from(&self.b1);
        b.view_mut((0, m), (n, p)).copy_from(&self.b2);
        b
    }

    /// `A + B1 K1 + B2 K2`.
    pub fn closed_loop(&self, k1: &DMatrix<f64>, k2: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b1 * k1 + &self.b2 * k2
    }

    /// Player 2 absent (no columns or an all-zero channel): the game
    /// collapses to single-player covariance control.
    pub fn is_single_player(&self) -> bool {
        self.p() == 0 || self.b2.iter().all(|&v| v == 0.0)
    }

    /// Copy with player 2's channel scaled by `s`.
    pub fn with_b2_scaled(&self, s: f64) -> Plant {
        Plant {
            b2: &self.b2 * s,
            ..self.clone()
        }
    }

    fn check_dimensions(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                n,
                self.a.ncols()
            )));
        }
        for (name, m) in [("B1", &self.b1), ("B2", &self.b2), ("C", &self.c)] {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has {} rows, expected {n}",
                    m.nrows()
                )));
            }
        }
        Ok(())
    }
}

/// Finite-horizon steering problem: find the terminal cost `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHorizonProblem {
    pub plant: Plant,
    pub q: DMatrix<f64>,
    pub horizon: f64,
    pub sigma0: DMatrix<f64>,
    pub sigma_t: DMatrix<f64>,
    pub grid_steps: usize,
}

impl FiniteHorizonProblem {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.horizon, self.grid_steps)
    }

    pub fn with_grid_steps(&self, grid_steps: usize) -> Self {
        Self {
            grid_steps,
            ..self.clone()
        }
    }

    /// Validates and returns a copy with all symmetric inputs symmetrized.
    pub fn prepared(&self) -> Result<Self> {
        validate_problem(self)?.into_result()?;
        Ok(Self {
            q: numkit::symmetrize(&self.q),
            sigma0: numkit::symmetrize(&self.sigma0),
            sigma_t: numkit::symmetrize(&self.sigma_t),
            ..self.clone()
        })
    }
}

/// Infinite-horizon problem: find the running cost `Q` that makes `Sigma`
/// the stationary covariance under Nash play.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryProblem {
    pub plant: Plant,
    pub sigma: DMatrix<f64>,
}

impl StationaryProblem {
    pub fn prepared(&self) -> Result<Self> {
        validate_problem(self)?.into_result()?;
        Ok(Self {
            sigma: numkit::symmetrize(&self.sigma),
            ..self.clone()
        })
    }
}

/// Newton/homotopy/integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub fd_step: f64,
    pub blowup_threshold: f64,
    pub homotopy_steps: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-9,
            max_newton_iters: 100,
            fd_step: 1e-6,
            blowup_threshold: 1e8,
            homotopy_steps: 10,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("newton_tol", self.newton_tol),
            ("fd_step", self.fd_step),
            ("blowup_threshold", self.blowup_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidOption(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_newton_iters == 0 {
            return Err(Error::InvalidOption("max_newton_iters must be positive".into()));
        }
        Ok(())
    }
}

/// What a failed check maps to when the report is turned into an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Finite,
    Symmetry,
    PositiveDefinite,
    PositiveSemidefinite,
    Horizon,
    GridSteps,
    Controllability,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub passed: bool,
    /// Rank, minimum eigenvalue, asymmetry or value, depending on `kind`.
    pub evidence: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// The error corresponding to the first failed check, if any.
    pub fn first_error(&self) -> Option<Error> {
        self.failures().next().map(|c| match c.kind {
            CheckKind::Finite => Error::NonFinite { name: c.name.clone() },
            CheckKind::Symmetry => Error::NotSymmetric {
                name: c.name.clone(),
                asymmetry: c.evidence,
            },
            CheckKind::PositiveDefinite => Error::NotPositiveDefinite {
                name: c.name.clone(),
                min_eigenvalue: c.evidence,
            },
            CheckKind::PositiveSemidefinite => Error::NotPositiveSemidefinite {
                name: c.name.clone(),
                min_eigenvalue: c.evidence,
            },
            CheckKind::Horizon => Error::NonPositiveHorizon(c.evidence),
            CheckKind::GridSteps => Error::InvalidOption(c.detail.clone()),
            CheckKind::Controllability => Error::Uncontrollable {
                pair: c.name.clone(),
                rank: c.evidence as usize,
                n: c.detail.parse().unwrap_or(0),
            },
        })
    }

    pub fn into_result(self) -> Result<Self> {
        match self.first_error() {
            Some(err) => Err(err),
            None => Ok(self),
        }
    }

    fn push(&mut self, name: impl Into<String>, kind: CheckKind, passed: bool, evidence: f64, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            kind,
            passed,
            evidence,
            detail: detail.into(),
        });
    }
}

/// `[B, AB, …, A^{n−1}B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let k = b.ncols();
    let mut out = DMatrix::zeros(n, n * k);
    let mut block = b.clone();
    for i in 0..n {
        out.view_mut((0, i * k), (n, k)).copy_from(&block);
        block = a * block;
    }
    out
}

/// Kalman rank tests for (A,B1), (A,B2) and (A,C).
///
/// A plant without player 2 (see [`Plant::is_single_player`]) records the
/// (A,B2) check as passed: that is the covariance-control special case.
pub fn validate_plant(plant: &Plant) -> Result<ValidationReport> {
    plant.check_dimensions()?;
    let mut report = ValidationReport::default();
    let n = plant.n();
    for (name, m) in [("A", &plant.a), ("B1", &plant.b1), ("B2", &plant.b2), ("C", &plant.c)] {
        let finite = m.iter().all(|v| v.is_finite());
        report.push(name, CheckKind::Finite, finite, 0.0, "entries finite");
    }
    if !report.passed() {
        return Ok(report);
    }
    for (pair, b) in [("(A,B1)", &plant.b1), ("(A,B2)", &plant.b2), ("(A,C)", &plant.c)] {
        if pair == "(A,B2)" && plant.is_single_player() {
            report.push(pair, CheckKind::Controllability, true, 0.0, n.to_string());
            continue;
        }
        let rank = numkit::numerical_rank(&controllability_matrix(&plant.a, b));
        report.push(pair, CheckKind::Controllability, rank == n, rank as f64, n.to_string());
    }
    Ok(report)
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_symmetric(report: &mut ValidationReport, name: &str, m: &DMatrix<f64>, definite: bool) {
    if !m.iter().all(|v| v.is_finite()) {
        report.push(name, CheckKind::Finite, false, 0.0, "entries finite");
        return;
    }
    let asym = numkit::relative_asymmetry(m);
    let sym_ok = asym <= SYMMETRY_TOL;
    report.push(name, CheckKind::Symmetry, sym_ok, asym, "relative Frobenius asymmetry");
    if !sym_ok {
        return;
    }
    let min_eig = numkit::min_eigenvalue(m);
    if definite {
        report.push(name, CheckKind::PositiveDefinite, min_eig > 0.0, min_eig, "minimum eigenvalue");
    } else {
        // PSD up to round-off of the eigensolver.
        let ok = min_eig >= -1e-12 * m.norm().max(1.0);
        report.push(name, CheckKind::PositiveSemidefinite, ok, min_eig, "minimum eigenvalue");
    }
}

/// Problems that can be checked by [`validate_problem`].
pub trait Validate {
    fn validate(&self) -> Result<ValidationReport>;
}

impl Validate for FiniteHorizonProblem {
    fn validate(&self) -> Result<ValidationReport> {
        let n = self.plant.n();
        let mut report = validate_plant(&self.plant)?;
        check_square("Q", &self.q, n)?;
        check_square("Sigma0", &self.sigma0, n)?;
        check_square("SigmaT", &self.sigma_t, n)?;
        check_symmetric(&mut report, "Q", &self.q, false);
        check_symmetric(&mut report, "Sigma0", &self.sigma0, true);
        check_symmetric(&mut report, "SigmaT", &self.sigma_t, true);
        report.push(
            "horizon",
            CheckKind::Horizon,
            self.horizon > 0.0 && self.horizon.is_finite(),
            self.horizon,
            "T > 0",
        );
        report.push(
            "grid_steps",
            CheckKind::GridSteps,
            self.grid_steps >= 2,
            self.grid_steps as f64,
            format!("grid_steps must be at least 2, got {}", self.grid_steps),
        );
        Ok(report)
    }
}

impl Validate for StationaryProblem {
    fn validate(&self) -> Result<ValidationReport> {
        let mut report = validate_plant(&self.plant)?;
        check_square("Sigma", &self.sigma, self.plant.n())?;
        check_symmetric(&mut report, "Sigma", &self.sigma, true);
        Ok(report)
    }
}

/// Full well-posedness report. `Err` only for dimension mismatches; every
/// other failure is a failed check in the report (see
/// [`ValidationReport::into_result`]).
pub fn validate_problem<P: Validate + ?Sized>(problem: &P) -> Result<ValidationReport> {
    problem.validate()
}

pub mod scenario {
    //! JSON scenario documents.
    //!
    //! ```json
    //! { "plant": {"A": [[0]], "B1": [[1.414]], "B2": [[1]], "C": [[1]]},
    //!   "horizon": {"T": 1.0, "steps": 400},
    //!   "Q": [[0]], "Sigma0": [[1]], "SigmaT": [[1]],
    //!   "solver": {"newton_tol": 1e-10} }
    //! ```
    //!
    //! or `"stationary": {"Sigma": [[0.5]]}` in place of the horizon keys.
    //! Unknown keys are rejected.

    use super::*;

    pub type RowMatrix = Vec<Vec<f64>>;

    pub const DEFAULT_GRID_STEPS: usize = 200;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct PlantDoc {
        #[serde(rename = "A")]
        pub a: RowMatrix,
        #[serde(rename = "B1")]
        pub b1: RowMatrix,
        #[serde(rename = "B2")]
        pub b2: RowMatrix,
        #[serde(rename = "C")]
        pub c: RowMatrix,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct HorizonDoc {
        #[serde(rename = "T")]
        pub t: f64,
        #[serde(default = "default_steps")]
        pub steps: usize,
    }

    fn default_steps() -> usize {
        DEFAULT_GRID_STEPS
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct StationaryDoc {
        #[serde(rename = "Sigma")]
        pub sigma: RowMatrix,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct ScenarioDocument {
        pub plant: PlantDoc,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub horizon: Option<HorizonDoc>,
        #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
        pub q: Option<RowMatrix>,
        #[serde(rename = "Sigma0", default, skip_serializing_if = "Option::is_none")]
        pub sigma0: Option<RowMatrix>,
        #[serde(rename = "SigmaT", default, skip_serializing_if = "Option::is_none")]
        pub sigma_t: Option<RowMatrix>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub stationary: Option<StationaryDoc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub solver: Option<SolverOptions>,
    }

    /// A parsed scenario.
    #[derive(Debug, Clone, PartialEq)]
    pub enum Scenario {
        Finite(FiniteHorizonProblem),
        Stationary(StationaryProblem),
    }

    impl Scenario {
        pub fn plant(&self) -> &Plant {
            match self {
                Scenario::Finite(p) => &p.plant,
                Scenario::Stationary(p) => &p.plant,
            }
        }
    }

    /// Row-major nested arrays to a matrix. `rows` disambiguates empty
    /// inner arrays (an n×0 channel).
    pub fn matrix_from_rows(name: &str, rows: &RowMatrix) -> Result<DMatrix<f64>> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Scenario(format!("{name}: rows have unequal lengths")));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Scenario(format!("{name}: non-finite entry")));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn matrix_to_rows(m: &DMatrix<f64>) -> RowMatrix {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    }

    impl ScenarioDocument {
        pub fn from_json(text: &str) -> Result<Self> {
            serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
        }

        pub fn to_json(&self) -> Result<String> {
            Ok(serde_json::to_string_pretty(self)?)
        }

        pub fn options(&self) -> SolverOptions {
            self.solver.unwrap_or_default()
        }

        pub fn scenario(&self) -> Result<Scenario> {
            let plant = Plant::new(
                matrix_from_rows("A", &self.plant.a)?,
                matrix_from_rows("B1", &self.plant.b1)?,
                matrix_from_rows("B2", &self.plant.b2)?,
                matrix_from_rows("C", &self.plant.c)?,
            )?;
            let finite_keys = self.horizon.is_some()
                || self.q.is_some()
                || self.sigma0.is_some()
                || self.sigma_t.is_some();
            match (&self.stationary, finite_keys) {
                (Some(_), true) => Err(Error::Scenario(
                    "document mixes \"stationary\" with horizon keys".into(),
                )),
                (Some(st), false) => Ok(Scenario::Stationary(StationaryProblem {
                    plant,
                    sigma: matrix_from_rows("Sigma", &st.sigma)?,
                })),
                (None, _) => {
                    let missing = |key: &str| Error::Scenario(format!("missing key \"{key}\""));
                    let horizon = self.horizon.as_ref().ok_or_else(|| missing("horizon"))?;
                    Ok(Scenario::Finite(FiniteHorizonProblem {
                        plant,
                        q: matrix_from_rows("Q", self.q.as_ref().ok_or_else(|| missing("Q"))?)?,
                        horizon: horizon.t,
                        sigma0: matrix_from_rows("Sigma0", self.sigma0.as_ref().ok_or_else(|| missing("Sigma0"))?)?,
                        sigma_t: matrix_from_rows("SigmaT", self.sigma_t.as_ref().ok_or_else(|| missing("SigmaT"))?)?,
                        grid_steps: horizon.steps,
                    }))
                }
            }
        }

        pub fn from_finite(problem: &FiniteHorizonProblem, solver: Option<SolverOptions>) -> Self {
            Self {
                plant: PlantDoc::from_plant(&problem.plant),
                horizon: Some(HorizonDoc {
                    t: problem.horizon,
                    steps: problem.grid_steps,
                }),
                q: Some(matrix_to_rows(&problem.q)),
                sigma0: Some(matrix_to_rows(&problem.sigma0)),
                sigma_t: Some(matrix_to_rows(&problem.sigma_t)),
                stationary: None,
                solver,
            }
        }

        pub fn from_stationary(problem: &StationaryProblem, solver: Option<SolverOptions>) -> Self {
            Self {
                plant: PlantDoc::from_plant(&problem.plant),
                horizon: None,
                q: None,
                sigma0: None,
                sigma_t: None,
                stationary: Some(StationaryDoc {
                    sigma: matrix_to_rows(&problem.sigma),
                }),
                solver,
            }
        }
    }

    impl PlantDoc {
        pub fn from_plant(plant: &Plant) -> Self {
            Self {
                a: matrix_to_rows(&plant.a),
                b1: matrix_to_rows(&plant.b1),
                b2: matrix_to_rows(&plant.b2),
                c: matrix_to_rows(&plant.c),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn double_integrator() -> Plant {
        Plant::new(
            dmatrix![0.0, 1.0; 0.0, 0.0],
            dmatrix![0.0; 1.0],
            dmatrix![0.0; 1.0],
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    fn ranks(report: &ValidationReport) -> Vec<f64> {
        report
            .checks
            .iter()
            .filter(|c| c.kind == CheckKind::Controllability)
            .map(|c| c.evidence)
            .collect()
    }

    #[test]
    fn scalar_plant_is_controllable() {
        let plant = Plant::new(scalar(0.0), scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
        let report = validate_plant(&plant).unwrap();
        assert!(report.passed());
        assert_eq!(ranks(&report), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn double_integrator_is_controllable() {
        let report = validate_plant(&double_integrator()).unwrap();
        assert!(report.passed());
        assert_eq!(ranks(&report), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn repeated_eigenvalue_single_channel_fails() {
        let plant = Plant {
            a: DMatrix::identity(2, 2),
            b1: dmatrix![1.0; 0.0],
            b2: DMatrix::identity(2, 2),
            c: DMatrix::identity(2, 2),
        };
        let report = validate_plant(&plant).unwrap();
        assert!(!report.passed());
        let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["(A,B1)"]);
        assert!(matches!(
            report.first_error(),
            Some(Error::Uncontrollable { rank: 1, n: 2, .. })
        ));
    }

    #[test]
    fn row_mismatch_is_an_error() {
        let plant = Plant {
            a: DMatrix::identity(2, 2),
            b1: dmatrix![1.0],
            b2: dmatrix![1.0; 0.0],
            c: DMatrix::identity(2, 2),
        };
        assert!(matches!(validate_plant(&plant), Err(Error::DimensionMismatch(_))));
    }

    fn finite(q: DMatrix<f64>, sigma0: DMatrix<f64>, sigma_t: DMatrix<f64>) -> FiniteHorizonProblem {
        FiniteHorizonProblem {
            plant: double_integrator(),
            q,
            horizon: 1.0,
            sigma0,
            sigma_t,
            grid_steps: 200,
        }
    }

    #[test]
    fn problem_examples() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let ok = finite(DMatrix::zeros(2, 2), eye.clone(), &eye * 2.0);
        assert!(validate_problem(&ok).unwrap().passed());

        let bad = finite(DMatrix::zeros(2, 2), dmatrix![1.0, 0.0; 0.0, -0.1], eye.clone());
        let err = validate_problem(&bad).unwrap().first_error().unwrap();
        assert!(matches!(err, Error::NotPositiveDefinite { ref name, .. } if name == "Sigma0"));

        let asym = finite(dmatrix![0.0, 1.0; 0.0, 0.0], eye.clone(), eye.clone());
        let err = validate_problem(&asym).unwrap().first_error().unwrap();
        assert!(matches!(err, Error::NotSymmetric { ref name, .. } if name == "Q"));

        let mut neg = finite(DMatrix::zeros(2, 2), eye.clone(), eye);
        neg.horizon = -1.0;
        assert!(matches!(neg.prepared(), Err(Error::NonPositiveHorizon(_))));
    }

    #[test]
    fn validation_is_idempotent() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let p = finite(DMatrix::zeros(2, 2), eye.clone(), eye * 3.0);
        assert_eq!(validate_problem(&p).unwrap(), validate_problem(&p).unwrap());
    }

    #[test]
    fn near_symmetric_inputs_are_symmetrized() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let s = dmatrix![1.0, 0.2 + 1e-12; 0.2, 1.0];
        let p = finite(DMatrix::zeros(2, 2), s, eye).prepared().unwrap();
        assert_eq!(p.sigma0[(0, 1)], p.sigma0[(1, 0)]);
    }

    #[test]
    fn single_player_plant_passes_b2_check() {
        let mut plant = double_integrator();
        plant.b2 = DMatrix::zeros(2, 1);
        assert!(plant.is_single_player());
        assert!(validate_plant(&plant).unwrap().passed());
    }

    #[test]
    fn scenario_rejects_unknown_keys() {
        let text = r#"{"plant": {"A": [[0]], "B1": [[1]], "B2": [[1]], "C": [[1]]},
                      "stationary": {"Sigma": [[1]]}, "bogus": 1}"#;
        let err = scenario::ScenarioDocument::from_json(text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");

        let nested = r#"{"plant": {"A": [[0]], "B1": [[1]], "B2": [[1]], "C": [[1]], "D": [[0]]},
                        "stationary": {"Sigma": [[1]]}}"#;
        let err = scenario::ScenarioDocument::from_json(nested).unwrap_err();
        assert!(err.to_string().contains('D'), "{err}");
    }

    #[test]
    fn scenario_parses_both_forms() {
        let text = r#"{"plant": {"A": [[0]], "B1": [[1.4142135623730951]], "B2": [[1]], "C": [[1]]},
                      "horizon": {"T": 1.0, "steps": 400},
                      "Q": [[0]], "Sigma0": [[1]], "SigmaT": [[1]],
                      "solver": {"newton_tol": 1e-10}}"#;
        let doc = scenario::ScenarioDocument::from_json(text).unwrap();
        assert_eq!(doc.options().newton_tol, 1e-10);
        assert_eq!(doc.options().max_newton_iters, 100);
        match doc.scenario().unwrap() {
            scenario::Scenario::Finite(p) => {
                assert_eq!(p.grid_steps, 400);
                assert_eq!(p.horizon, 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        let back = scenario::ScenarioDocument::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);

        let st = r#"{"plant": {"A": [[0]], "B1": [[1]], "B2": [[1]], "C": [[1]]}, "stationary": {"Sigma": [[0.5]]}}"#;
        let doc = scenario::ScenarioDocument::from_json(st).unwrap();
        assert!(matches!(doc.scenario().unwrap(), scenario::Scenario::Stationary(_)));
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let text = r#"{"plant": {"A": [[0, 1], [0]], "B1": [[1]], "B2": [[1]], "C": [[1]]}, "stationary": {"Sigma": [[1]]}}"#;
        let doc = scenario::ScenarioDocument::from_json(text).unwrap();
        assert!(matches!(doc.scenario(), Err(Error::Scenario(_))));
    }
}
