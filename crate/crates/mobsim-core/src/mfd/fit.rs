//! Constrained nonlinear least squares for the production models.
//!
//! A Levenberg–Marquardt solver (trust-region damping on the normal
//! equations) minimizes the squared production residuals, with inputs
//! normalized by their observed maxima for conditioning. The space-mean
//! speed monotonicity constraint — `dS/dA = d(P/A)/dA <= 0` on the observed
//! accumulation range — is enforced through an escalating quadratic penalty
//! on a dense accumulation grid; production nonnegativity comes from
//! keeping `a > 0`. Multi-start with seeded jitters guards against local
//! minima; everything is deterministic for a fixed configuration.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::metrics::rmsn;
use super::model::{MfdKind, MfdParams};
use super::series::MfdSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub multistart: usize,
    pub seed: u64,
    /// Grid points for the speed-monotonicity check.
    pub monotonic_grid: usize,
    /// Escalation stages for the constraint penalty.
    pub penalty_stages: usize,
    /// Relative cost improvement below which the solver stops.
    pub cost_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iterations: 300,
            multistart: 5,
            seed: 0,
            monotonic_grid: 500,
            penalty_stages: 6,
            cost_tolerance: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintFlags {
    /// `a > 0` held at the optimum (production nonnegative on the range).
    pub production_nonnegative: bool,
    /// The speed slope condition holds on the observed range.
    pub speed_monotonic: bool,
    /// A nonzero penalty weight was needed to reach feasibility.
    pub penalty_active: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub params: MfdParams,
    /// Sum of squared production residuals at the optimum.
    pub objective: f64,
    pub rmsn: f64,
    pub iterations: usize,
    pub flags: ConstraintFlags,
    /// Accepted-step costs of the winning solve (monotone by construction).
    pub cost_trace: Vec<f64>,
}

/// Normalized regression data.
struct Problem {
    /// A / a_scale, in [0, 1].
    u: Vec<f64>,
    /// gamma / g_scale.
    g: Vec<f64>,
    /// A_P / p_scale (zeros for the vehicle model).
    p: Vec<f64>,
    obs: Vec<f64>,
    a_scale: f64,
    g_scale: f64,
    p_scale: f64,
    n_params: usize,
    grid: Vec<f64>,
}

impl Problem {
    fn model(&self, theta: &[f64], i: usize) -> f64 {
        let u = self.u[i];
        let e = theta[1] * u.powi(3)
            + theta[2] * u.powi(2)
            + theta[3] * u
            + theta[4] * self.g[i]
            + if self.n_params > 5 { theta[5] * self.p[i] } else { 0.0 };
        theta[0] * u * e.exp()
    }

    /// Scaled speed-slope polynomial `E'(u)`; feasible when <= 0 on [0, 1].
    fn slope_poly(theta: &[f64], u: f64) -> f64 {
        3.0 * theta[1] * u * u + 2.0 * theta[2] * u + theta[3]
    }

    fn data_cost(&self, theta: &[f64]) -> f64 {
        (0..self.u.len()).map(|i| (self.model(theta, i) - self.obs[i]).powi(2)).sum()
    }

    fn penalty_cost(&self, theta: &[f64], mu: f64) -> f64 {
        if mu == 0.0 {
            return 0.0;
        }
        self.grid
            .iter()
            .map(|&u| {
                let v = Self::slope_poly(theta, u).max(0.0);
                mu * v * v
            })
            .sum()
    }

    fn max_violation(&self, theta: &[f64]) -> f64 {
        self.grid
            .iter()
            .map(|&u| Self::slope_poly(theta, u))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn violation_tolerance(&self, theta: &[f64]) -> f64 {
        1e-8 * (1.0 + theta[1].abs() + theta[2].abs() + theta[3].abs())
    }
}

/// One damped least-squares solve at fixed penalty weight. Returns the
/// parameters, the accepted-cost trace and the iteration count.
fn levenberg_marquardt(
    problem: &Problem,
    start: &[f64],
    mu: f64,
    cfg: &FitConfig,
) -> (Vec<f64>, Vec<f64>, usize) {
    let n = problem.u.len();
    let p = problem.n_params;
    let mut theta = start.to_vec();
    let mut cost = problem.data_cost(&theta) + problem.penalty_cost(&theta, mu);
    let mut lambda = 1e-3;
    let mut trace = vec![cost];
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        // Normal equations J^T J and J^T r over data + penalty residuals.
        let mut jtj = nalgebra::DMatrix::<f64>::zeros(p, p);
        let mut jtr = nalgebra::DVector::<f64>::zeros(p);
        let mut grad_norm: f64 = 0.0;
        for i in 0..n {
            let prediction = problem.model(&theta, i);
            let residual = prediction - problem.obs[i];
            let u = problem.u[i];
            let mut row = [0.0; 6];
            row[0] = if theta[0] != 0.0 { prediction / theta[0] } else { u };
            row[1] = prediction * u.powi(3);
            row[2] = prediction * u.powi(2);
            row[3] = prediction * u;
            row[4] = prediction * problem.g[i];
            if p > 5 {
                row[5] = prediction * problem.p[i];
            }
            for a in 0..p {
                jtr[a] += row[a] * residual;
                for b in a..p {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        if mu > 0.0 {
            let sqrt_mu = mu.sqrt();
            for &u in &problem.grid {
                let v = Problem::slope_poly(&theta, u);
                if v <= 0.0 {
                    continue;
                }
                let residual = sqrt_mu * v;
                let row = [0.0, sqrt_mu * 3.0 * u * u, sqrt_mu * 2.0 * u, sqrt_mu, 0.0, 0.0];
                for a in 0..p {
                    jtr[a] += row[a] * residual;
                    for b in a..p {
                        jtj[(a, b)] += row[a] * row[b];
                    }
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                jtj[(a, b)] = jtj[(b, a)];
            }
            grad_norm = grad_norm.max(jtr[a].abs());
        }
        if grad_norm < 1e-12 * (1.0 + cost) {
            break;
        }

        let mut improved = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for a in 0..p {
                damped[(a, a)] += lambda * jtj[(a, a)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 4.0;
                continue;
            };
            let candidate: Vec<f64> =
                theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            if candidate[0] <= 0.0 {
                lambda *= 4.0;
                continue;
            }
            let candidate_cost =
                problem.data_cost(&candidate) + problem.penalty_cost(&candidate, mu);
            if candidate_cost.is_finite() && candidate_cost < cost {
                let rel_gain = (cost - candidate_cost) / cost.max(1e-300);
                theta = candidate;
                cost = candidate_cost;
                trace.push(cost);
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                iterations += 1;
                if rel_gain < cfg.cost_tolerance {
                    return (theta, trace, iterations);
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e15 {
                return (theta, trace, iterations);
            }
        }
        if !improved {
            break;
        }
    }
    (theta, trace, iterations)
}

fn solve_from(problem: &Problem, start: &[f64], cfg: &FitConfig) -> (Vec<f64>, Vec<f64>, usize, bool) {
    // Unconstrained solve first; escalate the penalty only when violated.
    let (mut theta, mut trace, mut iterations) = levenberg_marquardt(problem, start, 0.0, cfg);
    let mut penalty_used = false;
    if problem.max_violation(&theta) > problem.violation_tolerance(&theta) {
        penalty_used = true;
        let base = problem.obs.iter().map(|o| o * o).sum::<f64>() / problem.obs.len() as f64;
        let mut mu = base.max(1e-12);
        for _ in 0..cfg.penalty_stages {
            let (t, tr, it) = levenberg_marquardt(problem, &theta, mu, cfg);
            theta = t;
            trace = tr;
            iterations += it;
            if problem.max_violation(&theta) <= problem.violation_tolerance(&theta) {
                break;
            }
            mu *= 10.0;
        }
    }
    (theta, trace, iterations, penalty_used)
}

/// Fits the production model to interval samples.
pub fn fit_mfd(samples: &[MfdSample], kind: MfdKind, cfg: &FitConfig) -> Result<FitReport> {
    if samples.len() < 20 {
        return Err(Error::Fit(format!(
            "need at least 20 samples, got {}",
            samples.len()
        )));
    }
    let a: Vec<f64> = samples.iter().map(|s| s.accumulation_veh).collect();
    let g: Vec<f64> = samples.iter().map(|s| s.gamma_veh_km).collect();
    let p: Vec<f64> = samples.iter().map(|s| s.passenger_accumulation).collect();
    let obs: Vec<f64> = samples
        .iter()
        .map(|s| match kind {
            MfdKind::Vehicle => s.production_veh_km_h,
            MfdKind::Passenger => s.passenger_production_km_h,
        })
        .collect();
    if a.iter().any(|v| *v < 0.0) || obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("samples contain negative or non-finite values".into()));
    }
    let a_max = a.iter().copied().fold(0.0, f64::max);
    let a_min = a.iter().copied().fold(f64::INFINITY, f64::min);
    if !(a_max > 0.0) || (a_max - a_min) < 1e-9 * a_max {
        return Err(Error::Fit("degenerate accumulation range".into()));
    }
    let g_scale = g.iter().copied().fold(0.0, f64::max).max(1e-12);
    let p_scale = p.iter().copied().fold(0.0, f64::max).max(1e-12);
    let n_params = match kind {
        MfdKind::Vehicle => 5,
        MfdKind::Passenger => 6,
    };
    let grid_n = cfg.monotonic_grid.max(2);
    let problem = Problem {
        u: a.iter().map(|v| v / a_max).collect(),
        g: g.iter().map(|v| v / g_scale).collect(),
        p: p.iter().map(|v| v / p_scale).collect(),
        obs: obs.clone(),
        a_scale: a_max,
        g_scale,
        p_scale,
        n_params,
        grid: (0..grid_n).map(|i| i as f64 / (grid_n - 1) as f64).collect(),
    };

    // a0 = max P/u over informative points; remaining coefficients zero.
    let a0 = problem
        .u
        .iter()
        .zip(&problem.obs)
        .filter(|(u, _)| **u > 1e-6)
        .map(|(u, o)| o / u)
        .fold(0.0, f64::max)
        .max(1e-9);
    let mut starts = vec![vec![a0, 0.0, 0.0, 0.0, 0.0, 0.0][..n_params].to_vec()];
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x6d66_645f_6669_74);
    for _ in 1..cfg.multistart.max(1) {
        let mut s = vec![0.0; n_params];
        s[0] = a0 * (1.0 + rng.gen_range(-0.4..0.4));
        for v in s.iter_mut().skip(1) {
            *v = rng.gen_range(-0.5..0.5);
        }
        starts.push(s);
    }

    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize, bool)> = None;
    for start in &starts {
        let (theta, trace, iterations, penalty_used) = solve_from(&problem, start, cfg);
        let cost = problem.data_cost(&theta);
        if best.as_ref().map_or(true, |(c, ..)| cost < *c) {
            best = Some((cost, theta, trace, iterations, penalty_used));
        }
    }
    let (objective, theta, cost_trace, iterations, penalty_active) =
        best.expect("at least one start");

    let speed_monotonic = problem.max_violation(&theta) <= problem.violation_tolerance(&theta);
    let predictions: Vec<f64> = (0..problem.u.len()).map(|i| problem.model(&theta, i)).collect();
    let fit_rmsn = rmsn(&predictions, &obs)?;

    // Map back to physical units.
    let params = MfdParams {
        kind,
        a: theta[0] / problem.a_scale,
        b: theta[1] / problem.a_scale.powi(3),
        c: theta[2] / problem.a_scale.powi(2),
        d: theta[3] / problem.a_scale,
        r: theta[4] / problem.g_scale,
        rho: if n_params > 5 { theta[5] / problem.p_scale } else { 0.0 },
    };
    Ok(FitReport {
        params,
        objective,
        rmsn: fit_rmsn,
        iterations,
        flags: ConstraintFlags {
            production_nonnegative: params.a > 0.0,
            speed_monotonic,
            penalty_active,
        },
        cost_trace,
    })
}
