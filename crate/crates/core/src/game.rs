//! Zero-sum LQ game machinery: game Riccati equation, Nash feedback,
//! closed-loop covariance propagation, cost evaluation and the
//! completion-of-squares value identity.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{FiniteHorizonProblem, Plant};
use crate::numkit::{self, Direction, MatrixTrajectory, TimeGrid};

pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e8;

/// Slack allowed on each one-sided saddle inequality.
pub const SADDLE_SLACK: f64 = 1e-9;

/// Backward RK4 for `Π' = −A'Π − ΠA + Π(B1B1' − B2B2')Π − Q`, `Π(T) = F`.
pub fn integrate_game_riccati(
    plant: &Plant,
    q: &DMatrix<f64>,
    f: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<MatrixTrajectory> {
    integrate_game_riccati_capped(plant, q, f, grid, DEFAULT_BLOWUP_THRESHOLD)
}

/// [`integrate_game_riccati`] with an explicit blow-up cap.
pub fn integrate_game_riccati_capped(
    plant: &Plant,
    q: &DMatrix<f64>,
    f: &DMatrix<f64>,
    grid: &TimeGrid,
    blowup_threshold: f64,
) -> Result<MatrixTrajectory> {
    let a = &plant.a;
    let at = a.transpose();
    let d = plant.channel_difference();
    numkit::integrate_matrix_ode(
        |_, pi| -(&at * pi) - pi * a + pi * &d * pi - q,
        f,
        grid,
        Direction::Backward,
        blowup_threshold,
    )
    .map_err(|e| match e {
        Error::BlowUp { t } => Error::RiccatiBlowUp { t },
        other => other,
    })
}

/// Linear state feedback `u = K1(t) x`, `v = K2(t) x` on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    pub k1: MatrixTrajectory,
    pub k2: MatrixTrajectory,
}

impl FeedbackLaw {
    pub fn new(k1: MatrixTrajectory, k2: MatrixTrajectory) -> Result<Self> {
        if k1.grid != k2.grid {
            return Err(Error::DimensionMismatch("gain schedules on different grids".into()));
        }
        Ok(Self { k1, k2 })
    }

    pub fn grid(&self) -> TimeGrid {
        self.k1.grid
    }

    /// Zero gains for a plant on `grid`.
    pub fn zero(plant: &Plant, grid: TimeGrid) -> Self {
        let n = plant.n();
        Self {
            k1: MatrixTrajectory {
                grid,
                values: vec![DMatrix::zeros(plant.m(), n); grid.len()],
            },
            k2: MatrixTrajectory {
                grid,
                values: vec![DMatrix::zeros(plant.p(), n); grid.len()],
            },
        }
    }

    /// Time-invariant gains.
    pub fn constant(k1: &DMatrix<f64>, k2: &DMatrix<f64>, grid: TimeGrid) -> Self {
        Self {
            k1: MatrixTrajectory {
                grid,
                values: vec![k1.clone(); grid.len()],
            },
            k2: MatrixTrajectory {
                grid,
                values: vec![k2.clone(); grid.len()],
            },
        }
    }

    /// Adds constant offsets to every node of both schedules.
    pub fn offset(&self, dk1: &DMatrix<f64>, dk2: &DMatrix<f64>) -> Self {
        Self {
            k1: self.k1.map(|k| k + dk1),
            k2: self.k2.map(|k| k + dk2),
        }
    }

    fn check_shapes(&self, plant: &Plant) -> Result<()> {
        let n = plant.n();
        let k1 = self.k1.first();
        let k2 = self.k2.first();
        if k1.shape() != (plant.m(), n) || k2.shape() != (plant.p(), n) {
            return Err(Error::DimensionMismatch(format!(
                "gains {:?}/{:?} do not fit plant with n={n}, m={}, p={}",
                k1.shape(),
                k2.shape(),
                plant.m(),
                plant.p()
            )));
        }
        Ok(())
    }
}

/// Nash feedback `K1 = −B1'Π`, `K2 = B2'Π` at every node.
pub fn nash_gains(plant: &Plant, pi: &MatrixTrajectory) -> FeedbackLaw {
    let b1t = plant.b1.transpose();
    let b2t = plant.b2.transpose();
    FeedbackLaw {
        k1: pi.map(|p| -(&b1t * p)),
        k2: pi.map(|p| &b2t * p),
    }
}

#[derive(Debug, Clone)]
pub struct CovariancePropagation {
    pub sigma: MatrixTrajectory,
    /// Smallest eigenvalue over all nodes.
    pub min_eigenvalue: f64,
    /// First node whose minimum eigenvalue fell below `1e-12`.
    pub non_positive_node: Option<usize>,
}

/// Forward RK4 for `Σ' = Acl(t)Σ + ΣAcl(t)' + CC'` with
/// `Acl = A + B1K1 + B2K2`. Gains between nodes come from four-point
/// interpolation so the scheme keeps its fourth order.
pub fn propagate_covariance(
    plant: &Plant,
    law: &FeedbackLaw,
    sigma0: &DMatrix<f64>,
) -> Result<CovariancePropagation> {
    law.check_shapes(plant)?;
    let cc = plant.noise();
    let grid = law.grid();
    let sigma = numkit::integrate_matrix_ode(
        |t, s| {
            let acl = plant.closed_loop(&law.k1.cubic_at(t), &law.k2.cubic_at(t));
            &acl * s + s * acl.transpose() + &cc
        },
        sigma0,
        &grid,
        Direction::Forward,
        DEFAULT_BLOWUP_THRESHOLD,
    )?;
    let mins: Vec<f64> = sigma.values.iter().map(numkit::min_eigenvalue).collect();
    let min_eigenvalue = mins.iter().copied().fold(f64::INFINITY, f64::min);
    let non_positive_node = mins.iter().position(|&l| l < 1e-12);
    if let Some(k) = non_positive_node {
        log::warn!(
            "covariance lost positive definiteness at t = {} (min eigenvalue {:.3e})",
            grid.node(k),
            mins[k]
        );
    }
    Ok(CovariancePropagation {
        sigma,
        min_eigenvalue,
        non_positive_node,
    })
}

/// `E{x(0)'Π(0)x(0)}` and `∫ tr(Π CC') dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueDecomposition {
    pub initial_term: f64,
    pub noise_term: f64,
}

impl ValueDecomposition {
    pub fn total(&self) -> f64 {
        self.initial_term + self.noise_term
    }
}

/// Player-1 cost; player 2's cost is its negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameValue {
    pub j1: f64,
    pub decomposition: Option<ValueDecomposition>,
    /// Sum of the trapezoid error bounds of every quadrature involved.
    pub quadrature_bound: f64,
}

impl GameValue {
    pub fn j2(&self) -> f64 {
        -self.j1
    }

    /// `j1 − (initial_term + noise_term)`, when a decomposition is known.
    pub fn identity_gap(&self) -> Option<f64> {
        self.decomposition.map(|d| self.j1 - d.total())
    }
}

fn trapezoid(samples: &[f64], h: f64) -> f64 {
    let last = samples.len() - 1;
    samples
        .iter()
        .enumerate()
        .map(|(k, v)| if k == 0 || k == last { 0.5 * h * v } else { h * v })
        .sum()
}

/// `∫ tr((Q + K1'K1 − K2'K2)Σ) dt + tr(F Σ(T))` along the closed loop of
/// `law`.
pub fn evaluate_cost(
    problem: &FiniteHorizonProblem,
    law: &FeedbackLaw,
    f: &DMatrix<f64>,
) -> Result<GameValue> {
    let prop = propagate_covariance(&problem.plant, law, &problem.sigma0)?;
    Ok(cost_along(problem, law, &prop.sigma, f))
}

fn cost_along(
    problem: &FiniteHorizonProblem,
    law: &FeedbackLaw,
    sigma: &MatrixTrajectory,
    f: &DMatrix<f64>,
) -> GameValue {
    let h = sigma.grid.dt();
    let samples: Vec<f64> = sigma
        .values
        .iter()
        .zip(law.k1.values.iter().zip(&law.k2.values))
        .map(|(s, (k1, k2))| {
            let w = &problem.q + k1.transpose() * k1 - k2.transpose() * k2;
            (w * s).trace()
        })
        .collect();
    let running = trapezoid(&samples, h);
    GameValue {
        j1: running + (f * sigma.last()).trace(),
        decomposition: None,
        quadrature_bound: numkit::trapezoid_error_bound(&samples, h),
    }
}

/// Π, the Nash law and its closed-loop covariance for a given `F`.
#[derive(Debug, Clone)]
pub struct NashEvaluation {
    pub pi: MatrixTrajectory,
    pub law: FeedbackLaw,
    pub sigma: MatrixTrajectory,
    pub value: GameValue,
}

/// Evaluates the Nash law induced by `F`, including the
/// completion-of-squares decomposition of its value.
pub fn nash_value(problem: &FiniteHorizonProblem, f: &DMatrix<f64>) -> Result<NashEvaluation> {
    let grid = problem.grid()?;
    let pi = integrate_game_riccati(&problem.plant, &problem.q, f, &grid)?;
    let law = nash_gains(&problem.plant, &pi);
    let prop = propagate_covariance(&problem.plant, &law, &problem.sigma0)?;
    let mut value = cost_along(problem, &law, &prop.sigma, f);

    let cc = problem.plant.noise();
    let noise_samples: Vec<f64> = pi.values.iter().map(|p| (p * &cc).trace()).collect();
    let h = grid.dt();
    value.decomposition = Some(ValueDecomposition {
        initial_term: (pi.first() * &problem.sigma0).trace(),
        noise_term: trapezoid(&noise_samples, h),
    });
    value.quadrature_bound += numkit::trapezoid_error_bound(&noise_samples, h);
    Ok(NashEvaluation {
        pi,
        law,
        sigma: prop.sigma,
        value,
    })
}

/// Outcome of perturbing each player's Nash gain by constant offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleReport {
    pub j1_star: f64,
    /// `j1(K1* + δ, K2*) − j1*`, one per perturbation; should be ≥ 0.
    pub player1_margins: Vec<f64>,
    /// `j1(K1*, K2* + δ) − j1*`, one per perturbation; should be ≤ 0.
    pub player2_margins: Vec<f64>,
}

impl SaddleReport {
    pub fn player1_min(&self) -> f64 {
        self.player1_margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn player1_max(&self) -> f64 {
        self.player1_margins.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn player2_min(&self) -> f64 {
        self.player2_margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn player2_max(&self) -> f64 {
        self.player2_margins.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// First violated inequality.
    pub fn violation(&self) -> Option<Error> {
        if let Some((index, &margin)) = self
            .player1_margins
            .iter()
            .enumerate()
            .find(|(_, &m)| m < -SADDLE_SLACK)
        {
            return Some(Error::SaddleViolation { player: 1, index, margin });
        }
        self.player2_margins
            .iter()
            .enumerate()
            .find(|(_, &m)| m > SADDLE_SLACK)
            .map(|(index, &margin)| Error::SaddleViolation { player: 2, index, margin })
    }
}

/// Random direction of Frobenius norm `magnitude`, drawn from the stream
/// `(seed, index)`.
pub fn perturbation(rows: usize, cols: usize, magnitude: f64, seed: u64, index: u64, player: u8) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index + u64::from(player - 1));
    let dir = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
    let norm: f64 = dir.norm();
    if norm == 0.0 || magnitude == 0.0 {
        DMatrix::zeros(rows, cols)
    } else {
        dir * (magnitude / norm)
    }
}

/// Cost of the Nash law for `F` with constant offsets added to the gains.
pub fn perturbed_cost(
    problem: &FiniteHorizonProblem,
    nash: &NashEvaluation,
    f: &DMatrix<f64>,
    dk1: &DMatrix<f64>,
    dk2: &DMatrix<f64>,
) -> Result<f64> {
    Ok(evaluate_cost(problem, &nash.law.offset(dk1, dk2), f)?.j1)
}

/// Saddle margins without the pass/fail decision.
pub fn saddle_margins(
    problem: &FiniteHorizonProblem,
    f: &DMatrix<f64>,
    count: usize,
    magnitude: f64,
    seed: u64,
) -> Result<SaddleReport> {
    let nash = nash_value(problem, f)?;
    let j1_star = nash.value.j1;
    let plant = &problem.plant;
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    let zero1 = DMatrix::zeros(m, n);
    let zero2 = DMatrix::zeros(p, n);
    let margins: Vec<(f64, Option<f64>)> = (0..count)
        .into_par_iter()
        .map(|i| -> Result<(f64, Option<f64>)> {
            let d1 = perturbation(m, n, magnitude, seed, i as u64, 1);
            let m1 = perturbed_cost(problem, &nash, f, &d1, &zero2)? - j1_star;
            let m2 = if p > 0 {
                let d2 = perturbation(p, n, magnitude, seed, i as u64, 2);
                Some(perturbed_cost(problem, &nash, f, &zero1, &d2)? - j1_star)
            } else {
                None
            };
            Ok((m1, m2))
        })
        .collect::<Result<_>>()?;
    Ok(SaddleReport {
        j1_star,
        player1_margins: margins.iter().map(|m| m.0).collect(),
        player2_margins: margins.iter().filter_map(|m| m.1).collect(),
    })
}

/// Checks `j1(K1*+δ, K2*) ≥ j1* − 1e-9` and `j1(K1*, K2*+δ) ≤ j1* + 1e-9`
/// for `count` random constant perturbations per player.
pub fn saddle_check(
    problem: &FiniteHorizonProblem,
    f: &DMatrix<f64>,
    count: usize,
    magnitude: f64,
    seed: u64,
) -> Result<SaddleReport> {
    let report = saddle_margins(problem, f, count, magnitude, seed)?;
    match report.violation() {
        Some(err) => Err(err),
        None => Ok(report),
    }
}
