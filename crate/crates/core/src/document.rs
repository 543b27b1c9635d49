//! JSON solution documents written by the command-line tool.
//!
//! Matrices are row-major nested arrays; trajectories are arrays of
//! `{"t": .., "matrix": ..}`. Timings live in `diagnostics.timings_ms` so
//! they can be dropped when comparing runs.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::FeedbackLaw;
use crate::model::scenario::{matrix_from_rows, matrix_to_rows, RowMatrix, ScenarioDocument};
use crate::numkit::{MatrixTrajectory, TimeGrid};
use crate::stationary::StationarySolution;
use crate::steering::IncentiveSolution;

pub const SCHEMA_VERSION: &str = "covsteer-solution/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub matrix: RowMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncentivePayload {
    /// `shooting` or `minimax`.
    pub method: String,
    #[serde(rename = "F")]
    pub f: RowMatrix,
    pub terminal_residual: f64,
    pub newton_iters: usize,
    pub homotopy_used: bool,
    #[serde(rename = "Pi")]
    pub pi: Vec<TrajectoryPoint>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<TrajectoryPoint>,
    #[serde(rename = "H")]
    pub h: Vec<TrajectoryPoint>,
    #[serde(rename = "K1")]
    pub k1: Vec<TrajectoryPoint>,
    #[serde(rename = "K2")]
    pub k2: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizedPayload {
    pub epsilon: f64,
    #[serde(rename = "K1")]
    pub k1: RowMatrix,
    #[serde(rename = "K2")]
    pub k2: RowMatrix,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryPayload {
    #[serde(rename = "P")]
    pub p: RowMatrix,
    #[serde(rename = "Q_out")]
    pub q_out: RowMatrix,
    #[serde(rename = "K1")]
    pub k1: RowMatrix,
    #[serde(rename = "K2")]
    pub k2: RowMatrix,
    pub hurwitz_margin: f64,
    pub epsilon_used: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularized: Option<RegularizedPayload>,
    pub lyapunov_residual: f64,
    pub riccati_residual: f64,
    pub non_unique: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Incentive(IncentivePayload),
    Stationary(StationaryPayload),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostics {
    pub residuals: BTreeMap<String, f64>,
    pub iterations: usize,
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionDocument {
    pub schema_version: String,
    pub problem: ScenarioDocument,
    pub payload: Payload,
    pub diagnostics: Diagnostics,
}

fn points(traj: &MatrixTrajectory) -> Vec<TrajectoryPoint> {
    traj.iter()
        .map(|(t, m)| TrajectoryPoint {
            t,
            matrix: matrix_to_rows(m),
        })
        .collect()
}

/// Rebuilds a uniform-grid trajectory from serialized points.
pub fn trajectory_from_points(name: &str, pts: &[TrajectoryPoint]) -> Result<MatrixTrajectory> {
    if pts.len() < 2 {
        return Err(Error::Scenario(format!("{name}: trajectory needs at least two points")));
    }
    let steps = pts.len() - 1;
    let grid = TimeGrid::new(pts[0].t, pts[steps].t, steps)?;
    for (k, p) in pts.iter().enumerate() {
        if (p.t - grid.node(k)).abs() > 1e-9 * (1.0 + grid.t1().abs()) {
            return Err(Error::Scenario(format!("{name}: time points are not uniform")));
        }
    }
    let values = pts
        .iter()
        .map(|p| matrix_from_rows(name, &p.matrix))
        .collect::<Result<Vec<_>>>()?;
    MatrixTrajectory::new(grid, values)
}

impl IncentivePayload {
    pub fn from_solution(solution: &IncentiveSolution, method: &str) -> Self {
        Self {
            method: method.to_string(),
            f: matrix_to_rows(&solution.f),
            terminal_residual: solution.terminal_residual,
            newton_iters: solution.newton_iters,
            homotopy_used: solution.homotopy_used,
            pi: points(&solution.pi),
            sigma: points(&solution.sigma),
            h: points(&solution.h),
            k1: points(&solution.law.k1),
            k2: points(&solution.law.k2),
        }
    }

    pub fn f(&self) -> Result<DMatrix<f64>> {
        matrix_from_rows("F", &self.f)
    }

    pub fn law(&self) -> Result<FeedbackLaw> {
        FeedbackLaw::new(
            trajectory_from_points("K1", &self.k1)?,
            trajectory_from_points("K2", &self.k2)?,
        )
    }

    pub fn sigma(&self) -> Result<MatrixTrajectory> {
        trajectory_from_points("Sigma", &self.sigma)
    }
}

impl StationaryPayload {
    pub fn from_solution(solution: &StationarySolution) -> Self {
        Self {
            p: matrix_to_rows(&solution.p),
            q_out: matrix_to_rows(&solution.q_out),
            k1: matrix_to_rows(&solution.k1),
            k2: matrix_to_rows(&solution.k2),
            hurwitz_margin: solution.hurwitz_margin,
            epsilon_used: solution.epsilon_used,
            regularized: solution.regularized.as_ref().map(|r| RegularizedPayload {
                epsilon: r.epsilon,
                k1: matrix_to_rows(&r.k1),
                k2: matrix_to_rows(&r.k2),
                margin: r.margin,
            }),
            lyapunov_residual: solution.lyapunov_residual,
            riccati_residual: solution.riccati_residual,
            non_unique: solution.non_unique,
        }
    }
}

impl SolutionDocument {
    pub fn new(problem: ScenarioDocument, payload: Payload, diagnostics: Diagnostics) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            problem,
            payload,
            diagnostics,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Scenario(format!(
                "unsupported schema_version {:?}, expected {SCHEMA_VERSION:?}",
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Copy with timings cleared, for run-to-run comparison.
    pub fn without_timings(&self) -> Self {
        let mut doc = self.clone();
        doc.diagnostics.timings_ms.clear();
        doc
    }

    pub fn incentive(&self) -> Result<&IncentivePayload> {
        match &self.payload {
            Payload::Incentive(p) => Ok(p),
            Payload::Stationary(_) => Err(Error::Scenario(
                "solution document holds a stationary solution, expected a finite-horizon one".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FiniteHorizonProblem, Plant, SolverOptions, StationaryProblem};
    use crate::{stationary, steering};

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn golden() -> FiniteHorizonProblem {
        FiniteHorizonProblem {
            plant: Plant::new(scalar(0.0), scalar(2f64.sqrt()), scalar(1.0), scalar(1.0)).unwrap(),
            q: scalar(0.0),
            horizon: 1.0,
            sigma0: scalar(1.0),
            sigma_t: scalar(1.0),
            grid_steps: 50,
        }
    }

    #[test]
    fn incentive_document_round_trips_exactly() {
        let p = golden();
        let sol = steering::solve_steering(&p, &SolverOptions::default()).unwrap();
        let mut diagnostics = Diagnostics::default();
        diagnostics.residuals.insert("terminal".into(), sol.terminal_residual);
        diagnostics.timings_ms.insert("solve".into(), 1.25);
        let doc = SolutionDocument::new(
            ScenarioDocument::from_finite(&p, None),
            Payload::Incentive(IncentivePayload::from_solution(&sol, "shooting")),
            diagnostics,
        );
        let back = SolutionDocument::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);
        let payload = back.incentive().unwrap();
        assert_eq!(payload.f().unwrap(), sol.f);
        assert_eq!(payload.law().unwrap(), sol.law);
        assert_eq!(payload.sigma().unwrap(), sol.sigma);
        assert!(back.without_timings().diagnostics.timings_ms.is_empty());
    }

    #[test]
    fn stationary_document_round_trips_exactly() {
        let prob = StationaryProblem {
            plant: Plant::new(scalar(0.3), scalar(2f64.sqrt()), scalar(1.0), scalar(1.0)).unwrap(),
            sigma: scalar(0.7),
        };
        let sol = stationary::solve_stationary(&prob).unwrap();
        let doc = SolutionDocument::new(
            ScenarioDocument::from_stationary(&prob, None),
            Payload::Stationary(StationaryPayload::from_solution(&sol)),
            Diagnostics::default(),
        );
        let text = doc.to_json().unwrap();
        assert!(text.contains("\"kind\": \"stationary\""));
        assert_eq!(SolutionDocument::from_json(&text).unwrap(), doc);
        assert!(SolutionDocument::from_json(&text).unwrap().incentive().is_err());
    }

    #[test]
    fn rejects_other_schema_versions() {
        let p = golden();
        let sol = steering::solve_steering(&p, &SolverOptions::default()).unwrap();
        let mut doc = SolutionDocument::new(
            ScenarioDocument::from_finite(&p, None),
            Payload::Incentive(IncentivePayload::from_solution(&sol, "shooting")),
            Diagnostics::default(),
        );
        doc.schema_version = "other/9".into();
        assert!(matches!(
            SolutionDocument::from_json(&doc.to_json().unwrap()),
            Err(Error::Scenario(_))
        ));
    }

    #[test]
    fn non_uniform_points_are_rejected() {
        let pts = vec![
            TrajectoryPoint { t: 0.0, matrix: vec![vec![1.0]] },
            TrajectoryPoint { t: 0.7, matrix: vec![vec![1.0]] },
            TrajectoryPoint { t: 1.0, matrix: vec![vec![1.0]] },
        ];
        assert!(trajectory_from_points("X", &pts).is_err());
    }
}
