//! Euler–Maruyama Monte Carlo for the contracting and duopoly models.
//!
//! Every path owns a ChaCha8 stream derived from `(seed, stream index)`, so a
//! path's noise does not depend on how paths are scheduled across threads.
//! With antithetic sampling paths `2k` and `2k+1` share stream `k` with
//! opposite signs, and standard errors are computed from pair averages.
//! All running integrals use the left-endpoint rule.

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contract::{assemble_lqg, IncentiveRates, RateMap};
use crate::model::{Firm, ModelKind, ModelParams, ParamError, RevenueScope, StateVector};
use crate::nash::{running_reward, Affine, FeedbackStrategy};
use crate::riccati::QuadraticValueFn;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("value function does not belong to these parameters: {0}")]
    ConfigMismatch(String),
    #[error("path {path} became non-finite at t = {t}")]
    NonFinitePath { path: usize, t: f64 },
    #[error("no samples")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Initial state.
    pub x0: [f64; 2],
    /// Initial payment level of each agent (only the first is used for the
    /// single-firm model).
    pub y0: [f64; 2],
    pub antithetic: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: 100_000,
            dt: 1e-3,
            seed: 0,
            x0: [0.0; 2],
            y0: [0.0; 2],
            antithetic: true,
        }
    }
}

impl SimConfig {
    /// Number of Euler steps covering `[0, horizon]`.
    pub fn n_steps(&self, horizon: f64) -> Result<usize, McError> {
        if self.n_paths < 2 {
            return Err(McError::InvalidConfig(format!("n_paths = {}", self.n_paths)));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(McError::InvalidConfig(
                "antithetic sampling needs an even n_paths".into(),
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(McError::InvalidConfig(format!("dt = {}", self.dt)));
        }
        if self.x0.iter().chain(&self.y0).any(|v| !v.is_finite()) {
            return Err(McError::InvalidConfig("non-finite initial condition".into()));
        }
        let n = (horizon / self.dt).round();
        if n < 1.0 || (n * self.dt - horizon).abs() > 1e-9 {
            return Err(McError::InvalidConfig(format!(
                "dt = {} does not divide the horizon {horizon}",
                self.dt
            )));
        }
        Ok(n as usize)
    }

    /// Sum of the initial payment levels of the agents of `kind`.
    pub fn total_y0(&self, kind: ModelKind) -> f64 {
        match kind {
            ModelKind::SingleFirm => self.y0[0],
            _ => self.y0[0] + self.y0[1],
        }
    }

    fn state0(&self) -> StateVector {
        StateVector::new(self.x0[0], self.x0[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityEstimate {
    pub label: String,
    pub mean: f64,
    pub std_err: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

impl UtilityEstimate {
    /// Number of standard errors separating the estimate from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.std_err == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target).abs() / self.std_err
        }
    }
}

/// Mean and standard error (unbiased variance) in index order. Sums are taken
/// relative to the first sample, so constant data give a zero error exactly.
fn mean_and_se(xs: &[f64]) -> Result<(f64, f64), McError> {
    let n = xs.len();
    let shift = *xs.first().ok_or(McError::Empty)?;
    let (s1, s2) = xs.iter().fold((0.0, 0.0), |(s1, s2), x| {
        let d = x - shift;
        (s1 + d, s2 + d * d)
    });
    let mean = shift + s1 / n as f64;
    if n == 1 {
        return Ok((mean, 0.0));
    }
    let var = ((s2 - s1 * s1 / n as f64) / (n - 1) as f64).max(0.0);
    Ok((mean, (var / n as f64).sqrt()))
}

/// Monte Carlo estimate of `E[-exp(-η Z)]` from i.i.d. payoff samples.
pub fn estimate_utility(label: &str, samples: &[f64], eta: f64) -> Result<UtilityEstimate, McError> {
    let utils: Vec<f64> = samples.iter().map(|z| -(-eta * z).exp()).collect();
    let (mean, std_err) = mean_and_se(&utils)?;
    Ok(UtilityEstimate {
        label: label.to_string(),
        mean,
        std_err,
        n_paths: samples.len(),
        dt: 0.0,
        seed: 0,
    })
}

/// Estimate from per-path utilities; antithetic partners are averaged first.
fn summarize(label: &str, utils: &[f64], cfg: &SimConfig) -> Result<UtilityEstimate, McError> {
    let (mean, std_err) = if cfg.antithetic {
        let pairs: Vec<f64> = utils.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        mean_and_se(&pairs)?
    } else {
        mean_and_se(utils)?
    };
    Ok(UtilityEstimate {
        label: label.to_string(),
        mean,
        std_err,
        n_paths: utils.len(),
        dt: cfg.dt,
        seed: cfg.seed,
    })
}

/// Gaussian source for one path.
struct PathNoise {
    rng: ChaCha8Rng,
    sign: f64,
    sqrt_dt: f64,
}

impl PathNoise {
    fn new(cfg: &SimConfig, path: usize) -> Self {
        let (stream, sign) = if cfg.antithetic {
            (path / 2, if path % 2 == 0 { 1.0 } else { -1.0 })
        } else {
            (path, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream as u64);
        PathNoise {
            rng,
            sign,
            sqrt_dt: cfg.dt.sqrt(),
        }
    }

    /// Brownian increments `(dW1, dW2)` over one step.
    fn increments(&mut self) -> [f64; 2] {
        let a: f64 = StandardNormal.sample(&mut self.rng);
        let b: f64 = StandardNormal.sample(&mut self.rng);
        [self.sign * self.sqrt_dt * a, self.sign * self.sqrt_dt * b]
    }
}

/// Runs `path` for every index in parallel and returns outcomes in index
/// order; the first failing index wins regardless of scheduling.
fn run_paths<T: Send>(
    n_paths: usize,
    path: impl Fn(usize) -> Result<T, McError> + Sync + Send,
) -> Result<Vec<T>, McError> {
    let out: Vec<Result<T, McError>> = (0..n_paths).into_par_iter().map(path).collect();
    out.into_iter().collect()
}

/// Terminal payoffs of one contracting path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrincipalPath {
    /// `-Y_T - ∫ g dt`.
    pub principal: f64,
    /// `Y^i_T + ∫ (f_i - c_i) dt` per agent.
    pub agents: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrincipalEstimates {
    pub principal: UtilityEstimate,
    pub agents: Vec<UtilityEstimate>,
}

fn check_value_fn(params: &ModelParams, v: &QuadraticValueFn) -> Result<(), McError> {
    let lqg = assemble_lqg(params)?;
    if lqg != *v.lqg() {
        return Err(McError::ConfigMismatch("reduced-equation data differ".into()));
    }
    if (v.grid().t_end() - params.horizon()).abs() > 1e-12 {
        return Err(McError::ConfigMismatch(format!(
            "horizon {} vs {}",
            v.grid().t_end(),
            params.horizon()
        )));
    }
    Ok(())
}

/// Simulates state and payments under the optimal contract read off `v`.
pub fn principal_paths(
    params: &ModelParams,
    v: &QuadraticValueFn,
    cfg: &SimConfig,
) -> Result<Vec<PrincipalPath>, McError> {
    check_value_fn(params, v)?;
    let n_steps = cfg.n_steps(params.horizon())?;
    let map = RateMap::new(params)?;
    let coeffs: Vec<(Matrix2<f64>, Vector2<f64>)> = (0..n_steps)
        .map(|k| {
            let t = (k as f64 * cfg.dt).min(params.horizon());
            let (a, b, _) = v.coefficients(t).expect("t within horizon");
            (a, b)
        })
        .collect();
    let gamma = Firm::BOTH.map(|f| params.gamma(f));
    let sigma = Firm::BOTH.map(|f| params.sigma(f));
    let eta = Firm::BOTH.map(|f| params.eta(f));
    let dt = cfg.dt;

    run_paths(cfg.n_paths, |path| {
        let mut noise = PathNoise::new(cfg, path);
        let mut x = cfg.state0();
        let mut y = cfg.y0;
        let mut g_int = 0.0;
        let mut agent_int = [0.0; 2];
        for (k, (a, b)) in coeffs.iter().enumerate() {
            let grad = a * x + b;
            let dw = noise.increments();
            let z = map.apply(&grad);
            match z {
                IncentiveRates::Single { z } => {
                    let c = 0.5 * (gamma[0] * z[0] * z[0] + gamma[1] * z[1] * z[1]);
                    let f = params.revenue(&x, RevenueScope::Total);
                    let spread = sigma[0].powi(2) * z[0] * z[0] + sigma[1].powi(2) * z[1] * z[1];
                    y[0] += (c - f + 0.5 * eta[0] * spread) * dt
                        + z[0] * sigma[0] * dw[0]
                        + z[1] * sigma[1] * dw[1];
                    agent_int[0] += (f - c) * dt;
                }
                IncentiveRates::TwoFirm { z } => {
                    for f in Firm::BOTH {
                        let (i, j) = (f.index(), f.other().index());
                        let c = 0.5 * gamma[i] * z[i][i] * z[i][i];
                        let r = params.firm_revenue(&x, f);
                        let prem = sigma[i].powi(2) * z[i][i].powi(2) + sigma[j].powi(2) * z[i][j].powi(2);
                        y[i] += (c - r + 0.5 * eta[i] * prem) * dt
                            + sigma[i] * z[i][i] * dw[i]
                            + sigma[j] * z[i][j] * dw[j];
                        agent_int[i] += (r - c) * dt;
                    }
                }
            }
            g_int += params.social_cost(&x)? * dt;
            for f in Firm::BOTH {
                let i = f.index();
                x[i] += gamma[i] * z.own(f) * dt + sigma[i] * dw[i];
            }
            if !(x.iter().all(|v| v.is_finite()) && y.iter().all(|v| v.is_finite())) {
                return Err(McError::NonFinitePath {
                    path,
                    t: (k + 1) as f64 * dt,
                });
            }
        }
        let y_total = match params.kind() {
            ModelKind::SingleFirm => y[0],
            _ => y[0] + y[1],
        };
        Ok(PrincipalPath {
            principal: -y_total - g_int,
            agents: [y[0] + agent_int[0], y[1] + agent_int[1]],
        })
    })
}

pub fn simulate_principal(
    params: &ModelParams,
    v: &QuadraticValueFn,
    cfg: &SimConfig,
) -> Result<PrincipalEstimates, McError> {
    let paths = principal_paths(params, v, cfg)?;
    principal_estimates(params, &paths, cfg)
}

/// Utility estimates from simulated contracting payoffs.
pub fn principal_estimates(
    params: &ModelParams,
    paths: &[PrincipalPath],
    cfg: &SimConfig,
) -> Result<PrincipalEstimates, McError> {
    let eta_p = params.require_principal()?.eta_p;
    let u: Vec<f64> = paths.iter().map(|p| -(-eta_p * p.principal).exp()).collect();
    let principal = summarize("principal", &u, cfg)?;
    let n_agents = if params.kind() == ModelKind::SingleFirm { 1 } else { 2 };
    let agents = (0..n_agents)
        .map(|i| {
            let eta = params.eta(Firm::BOTH[i]);
            let u: Vec<f64> = paths.iter().map(|p| -(-eta * p.agents[i]).exp()).collect();
            let label = if n_agents == 1 {
                "agent".to_string()
            } else {
                format!("firm {}", i + 1)
            };
            summarize(&label, &u, cfg)
        })
        .collect::<Result<_, _>>()?;
    Ok(PrincipalEstimates { principal, agents })
}

/// Closed-form principal utility `-exp(-η_p (v(0, x0) - Σ y0))`.
pub fn principal_utility_oracle(
    params: &ModelParams,
    v: &QuadraticValueFn,
    cfg: &SimConfig,
) -> Result<f64, McError> {
    let eta_p = params.require_principal()?.eta_p;
    let v0 = v
        .value(0.0, &cfg.state0())
        .map_err(|e| McError::ConfigMismatch(e.to_string()))?;
    Ok(-(-eta_p * (v0 - cfg.total_y0(params.kind()))).exp())
}

/// Unilateral change of one firm's feedback control: `a ↦ scale·a + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub firm: Firm,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub shift: f64,
}

fn one() -> f64 {
    1.0
}

struct NashSchedule {
    gains: Vec<[Affine; 2]>,
}

fn nash_schedule(
    params: &ModelParams,
    strategies: &(FeedbackStrategy, FeedbackStrategy),
    cfg: &SimConfig,
) -> Result<(NashSchedule, usize), McError> {
    params.require_kind(ModelKind::TwoFirmNash)?;
    let n_steps = cfg.n_steps(params.horizon())?;
    let gains = (0..n_steps)
        .map(|k| {
            let t = (k as f64 * cfg.dt).min(params.horizon());
            let g1 = strategies.0.gain_at(t);
            let g2 = strategies.1.gain_at(t);
            match (g1, g2) {
                (Some(a), Some(b)) => Ok([a, b]),
                _ => Err(McError::ConfigMismatch(format!(
                    "strategies undefined at t = {t}"
                ))),
            }
        })
        .collect::<Result<_, _>>()?;
    Ok((NashSchedule { gains }, n_steps))
}

/// Accumulated payoffs `∫ (r_i - c_i(a_i)) dt` of both firms along one path.
fn nash_path(
    params: &ModelParams,
    sched: &NashSchedule,
    cfg: &SimConfig,
    path: usize,
    deviation: Option<&Deviation>,
) -> Result<[f64; 2], McError> {
    let mut noise = PathNoise::new(cfg, path);
    let mut s = cfg.state0();
    let mut pay = [0.0; 2];
    let dt = cfg.dt;
    for (k, g) in sched.gains.iter().enumerate() {
        let mut a = [g[0].eval(&s), g[1].eval(&s)];
        if let Some(d) = deviation {
            let i = d.firm.index();
            a[i] = d.scale * a[i] + d.shift;
        }
        for f in Firm::BOTH {
            let i = f.index();
            pay[i] += (running_reward(params, f, &s) - params.effort_cost(a[i], f)) * dt;
        }
        let dw = noise.increments();
        for f in Firm::BOTH {
            let i = f.index();
            s[i] += a[i] * dt + params.sigma(f) * dw[i];
        }
        if !(s.iter().all(|v| v.is_finite()) && pay.iter().all(|v| v.is_finite())) {
            return Err(McError::NonFinitePath {
                path,
                t: (k + 1) as f64 * dt,
            });
        }
    }
    Ok(pay)
}

/// Payoffs of both firms per path under the (possibly deviated) feedback
/// strategies.
pub fn nash_paths(
    params: &ModelParams,
    strategies: &(FeedbackStrategy, FeedbackStrategy),
    cfg: &SimConfig,
    deviation: Option<&Deviation>,
) -> Result<Vec<[f64; 2]>, McError> {
    let (sched, _) = nash_schedule(params, strategies, cfg)?;
    run_paths(cfg.n_paths, |j| nash_path(params, &sched, cfg, j, deviation))
}

fn nash_utilities(params: &ModelParams, pays: &[[f64; 2]], firm: Firm) -> Vec<f64> {
    let eta = params.eta(firm);
    pays.iter().map(|p| -(-eta * p[firm.index()]).exp()).collect()
}

pub fn simulate_nash(
    params: &ModelParams,
    strategies: &(FeedbackStrategy, FeedbackStrategy),
    cfg: &SimConfig,
    deviation: Option<&Deviation>,
) -> Result<[UtilityEstimate; 2], McError> {
    let pays = nash_paths(params, strategies, cfg, deviation)?;
    nash_estimates(params, &pays, cfg)
}

pub fn nash_estimates(
    params: &ModelParams,
    pays: &[[f64; 2]],
    cfg: &SimConfig,
) -> Result<[UtilityEstimate; 2], McError> {
    Ok([
        summarize("firm 1", &nash_utilities(params, pays, Firm::One), cfg)?,
        summarize("firm 2", &nash_utilities(params, pays, Firm::Two), cfg)?,
    ])
}

/// Paired comparison of the deviator's utility with and without the
/// deviation, on common random numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub deviation: Deviation,
    pub baseline: UtilityEstimate,
    pub deviated: UtilityEstimate,
    /// Mean of `U(deviated) - U(baseline)` over paired paths.
    pub diff_mean: f64,
    pub diff_std_err: f64,
}

impl DeviationReport {
    /// Whether the deviation improves utility by more than `k` standard errors.
    pub fn improves_by_more_than(&self, k: f64) -> bool {
        self.diff_mean > k * self.diff_std_err
    }
}

pub fn deviation_test(
    params: &ModelParams,
    strategies: &(FeedbackStrategy, FeedbackStrategy),
    cfg: &SimConfig,
    deviation: &Deviation,
) -> Result<DeviationReport, McError> {
    let (sched, _) = nash_schedule(params, strategies, cfg)?;
    let pairs = run_paths(cfg.n_paths, |j| {
        Ok((
            nash_path(params, &sched, cfg, j, None)?,
            nash_path(params, &sched, cfg, j, Some(deviation))?,
        ))
    })?;
    let firm = deviation.firm;
    let base: Vec<[f64; 2]> = pairs.iter().map(|p| p.0).collect();
    let dev: Vec<[f64; 2]> = pairs.iter().map(|p| p.1).collect();
    let ub = nash_utilities(params, &base, firm);
    let ud = nash_utilities(params, &dev, firm);
    let diff: Vec<f64> = ud.iter().zip(&ub).map(|(d, b)| d - b).collect();
    let diff_est = summarize("difference", &diff, cfg)?;
    let label = format!("firm {}", firm.index() + 1);
    Ok(DeviationReport {
        deviation: *deviation,
        baseline: summarize(&label, &ub, cfg)?,
        deviated: summarize(&format!("{label} deviated"), &ud, cfg)?,
        diff_mean: diff_est.mean,
        diff_std_err: diff_est.std_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_point_sample() {
        let e = estimate_utility("u", &[0.0, 2f64.ln() / 1.5], 1.5).unwrap();
        assert_abs_diff_eq!(e.mean, -0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(e.std_err, 0.25, epsilon = 1e-15);
        assert!(matches!(estimate_utility("u", &[], 1.0), Err(McError::Empty)));
    }

    #[test]
    fn constant_samples() {
        let e = estimate_utility("u", &[0.0; 10], 2.0).unwrap();
        assert_eq!((e.mean, e.std_err), (-1.0, 0.0));
        let e = estimate_utility("u", &[0.3; 10], 2.0).unwrap();
        assert_abs_diff_eq!(e.mean, -(-0.6f64).exp(), epsilon = 1e-15);
        assert_eq!(e.std_err, 0.0);
    }

    #[test]
    fn config_validation() {
        let ok = SimConfig::default();
        assert_eq!(ok.n_steps(1.0).unwrap(), 1000);
        let bad = |c: SimConfig| c.n_steps(1.0).is_err();
        assert!(bad(SimConfig { n_paths: 1, ..ok.clone() }));
        assert!(bad(SimConfig { n_paths: 3, ..ok.clone() }));
        assert!(!bad(SimConfig {
            n_paths: 3,
            antithetic: false,
            ..ok.clone()
        }));
        assert!(bad(SimConfig { dt: 0.0, ..ok.clone() }));
        assert!(bad(SimConfig { dt: 0.3, ..ok.clone() }));
        assert!(bad(SimConfig {
            x0: [f64::NAN, 0.0],
            ..ok
        }));
    }

    #[test]
    fn antithetic_partners_mirror() {
        let cfg = SimConfig {
            seed: 9,
            ..Default::default()
        };
        let mut a = PathNoise::new(&cfg, 4);
        let mut b = PathNoise::new(&cfg, 5);
        let mut c = PathNoise::new(&cfg, 6);
        let (x, y, z) = (a.increments(), b.increments(), c.increments());
        assert_eq!(x[0], -y[0]);
        assert_eq!(x[1], -y[1]);
        assert_ne!(x[0], z[0]);
    }
}
