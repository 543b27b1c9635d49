//! Monte Carlo check of synthesized laws: Euler–Maruyama paths of
//! `dx = (A + B1K1(t) + B2K2(t))x dt + C dw` and zero-mean empirical
//! covariances.
//!
//! Path `i` draws from a ChaCha8 stream selected by `(seed, i)`, so results
//! do not depend on the worker count. Outer products are reduced by a
//! fixed-shape pairwise sum.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::FeedbackLaw;
use crate::model::Plant;
use crate::numkit;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Sorted times in `[0, T]`; each is snapped to the nearest step.
    pub record_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCovariance {
    pub time: f64,
    pub matrix: DMatrix<f64>,
    pub n_paths: usize,
    /// `1/√n_paths`.
    pub standard_error_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceDistance {
    /// `‖Σ̂ − Σ_target‖_F / ‖Σ_target‖_F`.
    pub frobenius_rel: f64,
    /// `3·n/√N + bias_allowance`.
    pub threshold: f64,
    pub pass: bool,
}

/// Step schedule shared by the simulators.
#[derive(Debug, Clone)]
struct Schedule {
    steps: usize,
    dt: f64,
    record_steps: Vec<usize>,
    t0: f64,
}

fn schedule(law: &FeedbackLaw, config: &SimConfig) -> Result<Schedule> {
    let grid = law.grid();
    if config.n_paths == 0 {
        return Err(Error::InvalidOption("n_paths must be positive".into()));
    }
    if !(config.dt > 0.0) || config.dt > grid.dt() * (1.0 + 1e-9) {
        return Err(Error::InvalidOption(format!(
            "simulation dt must lie in (0, {}], got {}",
            grid.dt(),
            config.dt
        )));
    }
    let span = grid.t1() - grid.t0();
    let steps = (span / config.dt).round().max(1.0) as usize;
    let dt = span / steps as f64;
    let mut record_steps = Vec::with_capacity(config.record_times.len());
    for (i, &t) in config.record_times.iter().enumerate() {
        if !(t >= grid.t0() - 1e-12 && t <= grid.t1() + 1e-12) {
            return Err(Error::InvalidOption(format!("record time {t} outside the law's horizon")));
        }
        if i > 0 && t < config.record_times[i - 1] {
            return Err(Error::InvalidOption("record times must be sorted".into()));
        }
        record_steps.push(((t - grid.t0()) / dt).round() as usize);
    }
    Ok(Schedule {
        steps,
        dt,
        record_steps,
        t0: grid.t0(),
    })
}

/// Closed-loop matrices at the start of every step.
fn closed_loops(plant: &Plant, law: &FeedbackLaw, sched: &Schedule) -> Vec<DMatrix<f64>> {
    (0..sched.steps)
        .map(|k| {
            let t = sched.t0 + k as f64 * sched.dt;
            plant.closed_loop(&law.k1.at(t), &law.k2.at(t))
        })
        .collect()
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Deterministic pairwise sum; the tree shape depends only on the length.
fn pairwise_sum(items: &[DMatrix<f64>]) -> DMatrix<f64> {
    match items.len() {
        1 => items[0].clone(),
        len => {
            let mid = len / 2;
            pairwise_sum(&items[..mid]) + pairwise_sum(&items[mid..])
        }
    }
}

fn averages(
    per_path: Vec<Vec<DMatrix<f64>>>,
    sched: &Schedule,
    n_paths: usize,
) -> Vec<EmpiricalCovariance> {
    (0..sched.record_steps.len())
        .map(|r| {
            let column: Vec<DMatrix<f64>> = per_path.iter().map(|p| p[r].clone()).collect();
            EmpiricalCovariance {
                time: sched.t0 + sched.record_steps[r] as f64 * sched.dt,
                matrix: numkit::symmetrize(&(pairwise_sum(&column) / n_paths as f64)),
                n_paths,
                standard_error_scale: 1.0 / (n_paths as f64).sqrt(),
            }
        })
        .collect()
}

fn check_inputs(plant: &Plant, law: &FeedbackLaw, sigma0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = plant.n();
    if sigma0.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("Sigma0 must be {n}x{n}")));
    }
    if law.k1.first().shape() != (plant.m(), n) || law.k2.first().shape() != (plant.p(), n) {
        return Err(Error::DimensionMismatch("feedback gains do not match the plant".into()));
    }
    numkit::sym_sqrt(sigma0)
}

pub fn simulate_paths(
    plant: &Plant,
    law: &FeedbackLaw,
    sigma0: &DMatrix<f64>,
    config: &SimConfig,
) -> Result<Vec<EmpiricalCovariance>> {
    let root = check_inputs(plant, law, sigma0)?;
    let sched = schedule(law, config)?;
    let acl = closed_loops(plant, law, &sched);
    let n = plant.n();
    let q = plant.c.ncols();
    let noise_scale = &plant.c * sched.dt.sqrt();

    let per_path: Vec<Vec<DMatrix<f64>>> = (0..config.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(config.seed, path);
            let mut x = &root * normal_vector(&mut rng, n);
            let mut drift = DVector::zeros(n);
            let mut out = Vec::with_capacity(sched.record_steps.len());
            let mut next_record = 0;
            for k in 0..=sched.steps {
                while next_record < sched.record_steps.len() && sched.record_steps[next_record] == k {
                    out.push(&x * x.transpose());
                    next_record += 1;
                }
                if k == sched.steps {
                    break;
                }
                drift.gemv(sched.dt, &acl[k], &x, 0.0);
                x += &drift;
                x.gemv(1.0, &noise_scale, &normal_vector(&mut rng, q), 1.0);
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinitePath {
                        path,
                        t: sched.t0 + (k + 1) as f64 * sched.dt,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(averages(per_path, &sched, config.n_paths))
}

/// Covariance the Euler–Maruyama scheme produces in expectation:
/// `Σ_{k+1} = (I + A_k h)Σ_k(I + A_k h)' + CC'h`, at the recorded times.
pub fn euler_maruyama_covariance(
    plant: &Plant,
    law: &FeedbackLaw,
    sigma0: &DMatrix<f64>,
    config: &SimConfig,
) -> Result<Vec<(f64, DMatrix<f64>)>> {
    check_inputs(plant, law, sigma0)?;
    let sched = schedule(law, config)?;
    let acl = closed_loops(plant, law, &sched);
    let n = plant.n();
    let noise = plant.noise() * sched.dt;
    let mut sigma = sigma0.clone();
    let mut out = Vec::with_capacity(sched.record_steps.len());
    let mut next_record = 0;
    for k in 0..=sched.steps {
        while next_record < sched.record_steps.len() && sched.record_steps[next_record] == k {
            out.push((sched.t0 + k as f64 * sched.dt, sigma.clone()));
            next_record += 1;
        }
        if k == sched.steps {
            break;
        }
        let step = DMatrix::identity(n, n) + &acl[k] * sched.dt;
        sigma = numkit::symmetrize(&(&step * &sigma * step.transpose() + &noise));
    }
    Ok(out)
}

/// Relative deterministic gap between what the scheme converges to and
/// the target, used as the bias allowance of [`covariance_distance`].
pub fn bias_allowance(scheme_covariance: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    (scheme_covariance - target).norm() / target.norm()
}

pub fn covariance_distance(
    empirical: &EmpiricalCovariance,
    target: &DMatrix<f64>,
    bias_allowance: f64,
) -> CovarianceDistance {
    let n = target.nrows() as f64;
    let frobenius_rel = (&empirical.matrix - target).norm() / target.norm();
    let threshold = 3.0 * n * empirical.standard_error_scale + bias_allowance;
    CovarianceDistance {
        frobenius_rel,
        threshold,
        pass: frobenius_rel <= threshold,
    }
}

/// Paired runs at `dt` and `dt/2`: each coarse increment is the sum of the
/// two fine increments of the same path. Returns `(coarse, fine)`.
pub fn simulate_step_halving(
    plant: &Plant,
    law: &FeedbackLaw,
    sigma0: &DMatrix<f64>,
    config: &SimConfig,
) -> Result<(Vec<EmpiricalCovariance>, Vec<EmpiricalCovariance>)> {
    let root = check_inputs(plant, law, sigma0)?;
    let coarse = schedule(law, config)?;
    let fine = Schedule {
        steps: coarse.steps * 2,
        dt: coarse.dt / 2.0,
        record_steps: coarse.record_steps.iter().map(|k| 2 * k).collect(),
        t0: coarse.t0,
    };
    let acl_c = closed_loops(plant, law, &coarse);
    let acl_f = closed_loops(plant, law, &fine);
    let n = plant.n();
    let q = plant.c.ncols();
    let half_root = &plant.c * fine.dt.sqrt();

    let pairs: Vec<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> = (0..config.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(config.seed, path);
            let x0 = &root * normal_vector(&mut rng, n);
            let (mut xc, mut xf) = (x0.clone(), x0);
            let (mut oc, mut of) = (Vec::new(), Vec::new());
            let mut next_record = 0;
            for k in 0..=coarse.steps {
                while next_record < coarse.record_steps.len() && coarse.record_steps[next_record] == k {
                    oc.push(&xc * xc.transpose());
                    of.push(&xf * xf.transpose());
                    next_record += 1;
                }
                if k == coarse.steps {
                    break;
                }
                let wa = &half_root * normal_vector(&mut rng, q);
                let wb = &half_root * normal_vector(&mut rng, q);
                xc = &xc + &acl_c[k] * &xc * coarse.dt + &wa + &wb;
                xf = &xf + &acl_f[2 * k] * &xf * fine.dt + wa;
                xf = &xf + &acl_f[2 * k + 1] * &xf * fine.dt + wb;
                if !xc.iter().chain(xf.iter()).all(|v| v.is_finite()) {
                    return Err(Error::NonFinitePath {
                        path,
                        t: coarse.t0 + (k + 1) as f64 * coarse.dt,
                    });
                }
            }
            Ok((oc, of))
        })
        .collect::<Result<_>>()?;
    let (pc, pf): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((
        averages(pc, &coarse, config.n_paths),
        averages(pf, &fine, config.n_paths),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game;
    use crate::model::{FiniteHorizonProblem, SolverOptions};
    use crate::numkit::TimeGrid;
    use crate::steering;
    use nalgebra::dmatrix;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn config(n_paths: usize, dt: f64, seed: u64, record_times: Vec<f64>) -> SimConfig {
        SimConfig {
            n_paths,
            dt,
            seed,
            record_times,
        }
    }

    fn golden() -> (FiniteHorizonProblem, steering::IncentiveSolution) {
        golden_on(400)
    }

    fn golden_on(grid_steps: usize) -> (FiniteHorizonProblem, steering::IncentiveSolution) {
        let p = FiniteHorizonProblem {
            plant: Plant::new(scalar(0.0), scalar(2f64.sqrt()), scalar(1.0), scalar(1.0)).unwrap(),
            q: scalar(0.0),
            horizon: 1.0,
            sigma0: scalar(1.0),
            sigma_t: scalar(1.0),
            grid_steps,
        };
        let sol = steering::solve_steering(&p, &SolverOptions::default()).unwrap();
        (p, sol)
    }

    #[test]
    fn ou_stationary_variance() {
        let plant = Plant::new(scalar(-1.0), DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), scalar(1.0)).unwrap();
        let law = FeedbackLaw::zero(&plant, TimeGrid::new(0.0, 2.0, 200).unwrap());
        let out = simulate_paths(&plant, &law, &scalar(0.5), &config(10_000, 1e-3, 3, vec![2.0])).unwrap();
        assert!((out[0].matrix[(0, 0)] - 0.5).abs() < 0.05 * 0.5, "{}", out[0].matrix);
    }

    #[test]
    fn noiseless_paths_follow_the_scheme_exactly() {
        let a = dmatrix![-0.5, 1.0; -1.0, -0.2];
        let plant = Plant::new(a, DMatrix::zeros(2, 1), DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)).unwrap();
        let law = FeedbackLaw::zero(&plant, TimeGrid::new(0.0, 1.0, 100).unwrap());
        let s0 = dmatrix![1.0, 0.3; 0.3, 0.5];
        let cfg = config(500, 1e-2, 9, vec![0.0, 1.0]);
        let out = simulate_paths(&plant, &law, &s0, &cfg).unwrap();
        // Empirical x0 covariance pushed through the scheme's transition.
        let mut phi = DMatrix::<f64>::identity(2, 2);
        for _ in 0..100 {
            phi = (DMatrix::identity(2, 2) + &plant.a * 1e-2) * phi;
        }
        let expected = &phi * &out[0].matrix * phi.transpose();
        assert!((&out[1].matrix - expected).norm() < 1e-12);
    }

    #[test]
    fn seeds_are_bitwise_deterministic() {
        let (p, sol) = golden();
        let cfg = config(200, 2.5e-3, 42, vec![0.5, 1.0]);
        let a = simulate_paths(&p.plant, &sol.law, &p.sigma0, &cfg).unwrap();
        let b = simulate_paths(&p.plant, &sol.law, &p.sigma0, &cfg).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| simulate_paths(&p.plant, &sol.law, &p.sigma0, &cfg).unwrap());
        assert_eq!(a, c);
        let other = simulate_paths(&p.plant, &sol.law, &p.sigma0, &config(200, 2.5e-3, 43, vec![1.0])).unwrap();
        assert_ne!(a[1].matrix, other[0].matrix);
    }

    #[test]
    fn distance_examples() {
        let emp = |x: f64| EmpiricalCovariance {
            time: 1.0,
            matrix: scalar(x),
            n_paths: 10_000,
            standard_error_scale: 0.01,
        };
        let d = covariance_distance(&emp(1.0), &scalar(1.0), 0.0);
        assert_eq!((d.frobenius_rel, d.pass), (0.0, true));
        let d = covariance_distance(&emp(1.04), &scalar(1.0), 0.015);
        assert!((d.frobenius_rel - 0.04).abs() < 1e-12 && d.pass);
        assert!((d.threshold - 0.045).abs() < 1e-12);
        assert!(!covariance_distance(&emp(2.0), &scalar(1.0), 0.015).pass);
    }

    #[test]
    fn zero_input_matches_lyapunov() {
        let a = dmatrix![-1.0, 0.5; 0.0, -0.5];
        let plant = Plant::new(a, DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::identity(2, 2)).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let law = FeedbackLaw::zero(&plant, grid);
        let s0 = dmatrix![1.0, 0.2; 0.2, 0.6];
        let exact = game::propagate_covariance(&plant, &law, &s0).unwrap().sigma;
        let cfg = config(10_000, 1e-3, 5, vec![1.0]);
        let out = simulate_paths(&plant, &law, &s0, &cfg).unwrap();
        let em = euler_maruyama_covariance(&plant, &law, &s0, &cfg).unwrap();
        let bias = bias_allowance(&em[0].1, exact.last());
        let d = covariance_distance(&out[0], exact.last(), bias);
        assert!(d.pass, "{d:?}");
    }

    #[test]
    fn golden_terminal_covariance_passes() {
        let (p, sol) = golden();
        let cfg = config(10_000, 1e-3, 42, vec![1.0]);
        let out = simulate_paths(&p.plant, &sol.law, &p.sigma0, &cfg).unwrap();
        let em = euler_maruyama_covariance(&p.plant, &sol.law, &p.sigma0, &cfg).unwrap();
        let d = covariance_distance(&out[0], &p.sigma_t, bias_allowance(&em[0].1, &p.sigma_t));
        assert!(d.pass, "{d:?}");
    }

    #[test]
    fn paired_step_halving_drift_is_first_order() {
        let (p, sol) = golden_on(50);
        let drift = |dt: f64| {
            let cfg = config(4000, dt, 8, vec![1.0]);
            let (c, f) = simulate_step_halving(&p.plant, &sol.law, &p.sigma0, &cfg).unwrap();
            (&c[0].matrix - &f[0].matrix).norm()
        };
        let (d1, d2) = (drift(0.02), drift(0.01));
        let ratio = d1 / d2;
        assert!((1.4..=2.8).contains(&ratio), "{d1} {d2} {ratio}");
    }

    #[test]
    fn rejects_steps_coarser_than_the_law() {
        let (p, sol) = golden();
        assert!(matches!(
            simulate_paths(&p.plant, &sol.law, &p.sigma0, &config(10, 0.01, 0, vec![1.0])),
            Err(Error::InvalidOption(_))
        ));
    }

    #[test]
    fn unstable_paths_report_non_finite() {
        let plant = Plant::new(scalar(2000.0), DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), scalar(1.0)).unwrap();
        let law = FeedbackLaw::zero(&plant, TimeGrid::new(0.0, 1.0, 10).unwrap());
        assert!(matches!(
            simulate_paths(&plant, &law, &scalar(1.0), &config(4, 1e-3, 0, vec![1.0])),
            Err(Error::NonFinitePath { .. })
        ));
    }

    /// Slow: 100 independent seeds at N = 10⁴.
    #[test]
    #[ignore]
    fn golden_passes_in_95_of_100_seeds() {
        let (p, sol) = golden();
        let mut passes = 0;
        for seed in 0..100 {
            let cfg = config(10_000, 1e-3, 1000 + seed, vec![1.0]);
            let out = simulate_paths(&p.plant, &sol.law, &p.sigma0, &cfg).unwrap();
            let em = euler_maruyama_covariance(&p.plant, &sol.law, &p.sigma0, &cfg).unwrap();
            if covariance_distance(&out[0], &p.sigma_t, bias_allowance(&em[0].1, &p.sigma_t)).pass {
                passes += 1;
            }
        }
        assert!(passes >= 95, "{passes}/100");
    }
}
