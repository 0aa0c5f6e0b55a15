//! Best responses and feedback Nash equilibrium of the unregulated duopoly.
//!
//! Firm `i` values its position through `V_i = -exp(η_i W_i)` with
//!
//! ```text
//! W(t, x, y) = ½ A x² + ½ B y² + C xy + D x + E y + F
//! ```
//!
//! (`Ã … F̃` for firm 2). Substituting into the HJB equation and dividing by
//! `η_i V_i` gives, for firm 1 facing an opponent control `a²`,
//!
//! ```text
//! 0 = ∂t W + ½σ1²(η1 W_x² + W_xx) + ½σ2²(η1 W_y² + W_yy) + a² W_y - ½γ1 W_x² - r1(x, y)
//! ```
//!
//! where `r1` is the firm's running revenue. Matching monomials yields six
//! Riccati-type ODEs per firm. Against a deterministic opponent `a²(t)` the
//! quadratic coefficients `A, B, C` do not see the opponent at all; in
//! equilibrium `a² = -γ2 (C̃ x + B̃ y + Ẽ)` couples the two six-dimensional
//! systems into twelve equations.
//!
//! The running revenue defaults to `r1 = (p0 - p1 x - p2 y) x` and
//! `r2 = (p0 - p1 x - p2 y) y`. With `literal_signs` the systems use the
//! alternative source `-(p0 - p1 x² - p2 xy)` (resp. `-(p0 - p2 y² - p1 xy)`),
//! which reproduces the ODE systems exactly as they are usually quoted; the
//! simulator then uses the same reward so both conventions stay internally
//! consistent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Firm, ModelKind, ModelParams, ParamError, StateVector};
use crate::ode::{self, OdeError, TimeGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NashError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("coefficient blow-up at t = {t}: no feedback equilibrium of this form on the horizon")]
    BlowUp { t: f64 },
    #[error(transparent)]
    Ode(OdeError),
    #[error("invalid opponent strategy: {0}")]
    InvalidOpponent(String),
}

impl From<OdeError> for NashError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::BlowUp { t } => NashError::BlowUp { t },
            other => NashError::Ode(other),
        }
    }
}

/// Affine feedback `a = x·X + y·Y + c`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Affine {
    pub x: f64,
    pub y: f64,
    pub c: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine { x: 0.0, y: 0.0, c }
    }

    pub fn eval(&self, s: &StateVector) -> f64 {
        self.x * s[0] + self.y * s[1] + self.c
    }

    pub fn lerp(&self, other: &Affine, w: f64) -> Affine {
        Affine {
            x: (1.0 - w) * self.x + w * other.x,
            y: (1.0 - w) * self.y + w * other.y,
            c: (1.0 - w) * self.c + w * other.c,
        }
    }
}

/// Running revenue `r(x, y) = x2·x² + y2·y² + xy·xy + x·x + y·y + c`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardPoly {
    pub x2: f64,
    pub y2: f64,
    pub xy: f64,
    pub x: f64,
    pub y: f64,
    pub c: f64,
}

impl RewardPoly {
    pub fn eval(&self, s: &StateVector) -> f64 {
        let (x, y) = (s[0], s[1]);
        self.x2 * x * x + self.y2 * y * y + self.xy * x * y + self.x * x + self.y * y + self.c
    }
}

pub fn reward_poly(params: &ModelParams, firm: Firm) -> RewardPoly {
    let [p0, p1, p2] = params.prices();
    match (params.literal_signs(), firm) {
        (false, Firm::One) => RewardPoly {
            x2: -p1,
            xy: -p2,
            x: p0,
            ..Default::default()
        },
        (false, Firm::Two) => RewardPoly {
            y2: -p2,
            xy: -p1,
            y: p0,
            ..Default::default()
        },
        (true, Firm::One) => RewardPoly {
            x2: p1,
            xy: p2,
            c: -p0,
            ..Default::default()
        },
        (true, Firm::Two) => RewardPoly {
            y2: p2,
            xy: p1,
            c: -p0,
            ..Default::default()
        },
    }
}

/// Running revenue of `firm` at state `(x, y)`, before effort cost.
pub fn running_reward(params: &ModelParams, firm: Firm, s: &StateVector) -> f64 {
    if params.literal_signs() {
        let [p0, p1, p2] = params.prices();
        let (x, y) = (s[0], s[1]);
        match firm {
            Firm::One => -(p0 - p1 * x * x - p2 * y * x),
            Firm::Two => -(p0 - p2 * y * y - p1 * y * x),
        }
    } else {
        params.firm_revenue(s, firm)
    }
}

/// `[A, B, C, D, E, F]` of one firm's quadratic `W`.
pub type FirmCoeffs = [f64; 6];

pub fn w_value(k: &FirmCoeffs, s: &StateVector) -> f64 {
    let (x, y) = (s[0], s[1]);
    0.5 * k[0] * x * x + 0.5 * k[1] * y * y + k[2] * x * y + k[3] * x + k[4] * y + k[5]
}

/// `(∂x W, ∂y W)`.
pub fn w_gradient(k: &FirmCoeffs, s: &StateVector) -> (f64, f64) {
    let (x, y) = (s[0], s[1]);
    (k[0] * x + k[2] * y + k[3], k[2] * x + k[1] * y + k[4])
}

/// Firm 1 system; `opp` is firm 2's control as an affine function of state.
pub fn firm1_rhs(params: &ModelParams, w: &FirmCoeffs, opp: &Affine) -> FirmCoeffs {
    let [a, b, c, d, e, _] = *w;
    let s1 = params.sigma(Firm::One).powi(2);
    let s2 = params.sigma(Firm::Two).powi(2);
    let eta = params.eta(Firm::One);
    let g = params.gamma(Firm::One);
    let r = reward_poly(params, Firm::One);
    let (ax, ay, a0) = (opp.x, opp.y, opp.c);
    [
        -(s1 * eta * a * a + s2 * eta * c * c + 2.0 * ax * c - g * a * a - 2.0 * r.x2),
        -(s1 * eta * c * c + s2 * eta * b * b + 2.0 * ay * b - g * c * c - 2.0 * r.y2),
        -(s1 * eta * a * c + s2 * eta * b * c + (ax * b + ay * c) - g * a * c - r.xy),
        -(s1 * eta * a * d + s2 * eta * c * e + (ax * e + a0 * c) - g * a * d - r.x),
        -(s1 * eta * c * d + s2 * eta * b * e + (ay * e + a0 * b) - g * c * d - r.y),
        -(0.5 * s1 * (eta * d * d + a) + 0.5 * s2 * (eta * e * e + b) + a0 * e
            - 0.5 * g * d * d
            - r.c),
    ]
}

/// Firm 2 system; `opp` is firm 1's control as an affine function of state.
pub fn firm2_rhs(params: &ModelParams, w: &FirmCoeffs, opp: &Affine) -> FirmCoeffs {
    let [a, b, c, d, e, _] = *w;
    let s1 = params.sigma(Firm::One).powi(2);
    let s2 = params.sigma(Firm::Two).powi(2);
    let eta = params.eta(Firm::Two);
    let g = params.gamma(Firm::Two);
    let r = reward_poly(params, Firm::Two);
    let (bx, by, b0) = (opp.x, opp.y, opp.c);
    [
        -(s1 * eta * a * a + s2 * eta * c * c + 2.0 * bx * a - g * c * c - 2.0 * r.x2),
        -(s1 * eta * c * c + s2 * eta * b * b + 2.0 * by * c - g * b * b - 2.0 * r.y2),
        -(s1 * eta * a * c + s2 * eta * b * c + (bx * c + by * a) - g * b * c - r.xy),
        -(s1 * eta * a * d + s2 * eta * c * e + (bx * d + b0 * a) - g * c * e - r.x),
        -(s1 * eta * c * d + s2 * eta * b * e + (by * d + b0 * c) - g * b * e - r.y),
        -(0.5 * s1 * (eta * d * d + a) + 0.5 * s2 * (eta * e * e + b) + b0 * d
            - 0.5 * g * e * e
            - r.c),
    ]
}

/// Equilibrium feedback gain of `firm` given its own coefficients.
pub fn feedback_gain(params: &ModelParams, firm: Firm, w: &FirmCoeffs) -> Affine {
    let g = params.gamma(firm);
    match firm {
        // -γ1 (A x + C y + D)
        Firm::One => Affine {
            x: -g * w[0],
            y: -g * w[2],
            c: -g * w[3],
        },
        // -γ2 (C̃ x + B̃ y + Ẽ)
        Firm::Two => Affine {
            x: -g * w[2],
            y: -g * w[1],
            c: -g * w[4],
        },
    }
}

fn split(y: &[f64; 12]) -> (FirmCoeffs, FirmCoeffs) {
    (
        std::array::from_fn(|i| y[i]),
        std::array::from_fn(|i| y[6 + i]),
    )
}

/// Right-hand side of the coupled twelve-equation system.
pub fn nash_rhs(params: &ModelParams, y: &[f64; 12]) -> [f64; 12] {
    let (w1, w2) = split(y);
    let d1 = firm1_rhs(params, &w1, &feedback_gain(params, Firm::Two, &w2));
    let d2 = firm2_rhs(params, &w2, &feedback_gain(params, Firm::One, &w1));
    std::array::from_fn(|i| if i < 6 { d1[i] } else { d2[i - 6] })
}

/// Deterministic opponent control as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OpponentStrategy {
    Constant { constant: f64 },
    /// Piecewise-linear through `(times[k], values[k])`, held constant
    /// outside the sampled range.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl OpponentStrategy {
    pub fn constant(a: f64) -> Self {
        OpponentStrategy::Constant { constant: a }
    }

    pub fn validate(&self) -> Result<(), NashError> {
        match self {
            OpponentStrategy::Constant { constant } if constant.is_finite() => Ok(()),
            OpponentStrategy::Constant { constant } => {
                Err(NashError::InvalidOpponent(format!("non-finite constant {constant}")))
            }
            OpponentStrategy::Tabulated { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(NashError::InvalidOpponent(
                        "times and values must be non-empty and of equal length".into(),
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(NashError::InvalidOpponent("times must be increasing".into()));
                }
                if times.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(NashError::InvalidOpponent("non-finite sample".into()));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            OpponentStrategy::Constant { constant } => *constant,
            OpponentStrategy::Tabulated { times, values } => {
                let n = times.len();
                if t <= times[0] {
                    return values[0];
                }
                if t >= times[n - 1] {
                    return values[n - 1];
                }
                let k = times.partition_point(|&s| s <= t) - 1;
                let w = (t - times[k]) / (times[k + 1] - times[k]);
                (1.0 - w) * values[k] + w * values[k + 1]
            }
        }
    }
}

/// Best-response coefficients of one firm on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseCoeffs {
    pub grid: TimeGrid,
    pub firm: Firm,
    pub values: Vec<FirmCoeffs>,
}

/// Equilibrium coefficients: entries `0..6` are firm 1's `A … F`, entries
/// `6..12` firm 2's `Ã … F̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct NashCoeffs {
    pub grid: TimeGrid,
    pub values: Vec<[f64; 12]>,
}

impl NashCoeffs {
    pub fn firm(&self, firm: Firm, k: usize) -> FirmCoeffs {
        let off = 6 * firm.index();
        std::array::from_fn(|i| self.values[k][off + i])
    }

    /// Coefficients of `firm` at time `t`, linearly interpolated.
    pub fn firm_at(&self, firm: Firm, t: f64) -> Option<FirmCoeffs> {
        let y = ode::interpolate(&self.grid, &self.values, t)?;
        let off = 6 * firm.index();
        Some(std::array::from_fn(|i| y[off + i]))
    }

    /// `W_i(t, x, y)`.
    pub fn w(&self, firm: Firm, t: f64, s: &StateVector) -> Option<f64> {
        Some(w_value(&self.firm_at(firm, t)?, s))
    }

    /// Equilibrium expected utility `-exp(η_i W_i(t, x, y))`.
    pub fn utility(&self, params: &ModelParams, firm: Firm, t: f64, s: &StateVector) -> Option<f64> {
        Some(-(params.eta(firm) * self.w(firm, t, s)?).exp())
    }
}

fn check_nash(params: &ModelParams) -> Result<(), NashError> {
    params.require_kind(ModelKind::TwoFirmNash)?;
    Ok(())
}

fn default_grid(params: &ModelParams) -> Result<TimeGrid, NashError> {
    Ok(TimeGrid::new(params.horizon(), ode::DEFAULT_NODES)?)
}

pub fn best_response(
    params: &ModelParams,
    firm: Firm,
    opponent: &OpponentStrategy,
) -> Result<BestResponseCoeffs, NashError> {
    best_response_on(params, firm, opponent, &default_grid(params)?)
}

pub fn best_response_on(
    params: &ModelParams,
    firm: Firm,
    opponent: &OpponentStrategy,
    grid: &TimeGrid,
) -> Result<BestResponseCoeffs, NashError> {
    check_nash(params)?;
    opponent.validate()?;
    let rhs = |t: f64, w: &FirmCoeffs| {
        let opp = Affine::constant(opponent.eval(t));
        match firm {
            Firm::One => firm1_rhs(params, w, &opp),
            Firm::Two => firm2_rhs(params, w, &opp),
        }
    };
    let values = ode::rk4_backward(rhs, [0.0; 6], grid)?;
    Ok(BestResponseCoeffs {
        grid: *grid,
        firm,
        values,
    })
}

pub fn solve_nash(params: &ModelParams) -> Result<NashCoeffs, NashError> {
    solve_nash_on(params, &default_grid(params)?)
}

pub fn solve_nash_on(params: &ModelParams, grid: &TimeGrid) -> Result<NashCoeffs, NashError> {
    check_nash(params)?;
    let values = ode::rk4_backward(|_t, y: &[f64; 12]| nash_rhs(params, y), [0.0; 12], grid)?;
    Ok(NashCoeffs {
        grid: *grid,
        values,
    })
}

/// Time-varying affine feedback control of one firm.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackStrategy {
    pub firm: Firm,
    pub grid: TimeGrid,
    pub gains: Vec<Affine>,
}

impl FeedbackStrategy {
    pub fn gain_at(&self, t: f64) -> Option<Affine> {
        let (k, w) = self.grid.locate(t)?;
        Some(self.gains[k].lerp(&self.gains[k + 1], w))
    }

    pub fn control(&self, t: f64, s: &StateVector) -> Option<f64> {
        Some(self.gain_at(t)?.eval(s))
    }
}

pub fn feedback_strategies(
    coeffs: &NashCoeffs,
    params: &ModelParams,
) -> (FeedbackStrategy, FeedbackStrategy) {
    let make = |firm: Firm| FeedbackStrategy {
        firm,
        grid: coeffs.grid,
        gains: (0..coeffs.grid.n_nodes())
            .map(|k| feedback_gain(params, firm, &coeffs.firm(firm, k)))
            .collect(),
    };
    (make(Firm::One), make(Firm::Two))
}

/// Per-equation maxima of `|dy/dt - rhs(t, y)|` over interior nodes, with
/// `dy/dt` from five-point central differences of the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeResidual {
    pub per_equation: Vec<f64>,
    pub max: f64,
}

fn trajectory_residual<const N: usize>(
    grid: &TimeGrid,
    traj: &[[f64; N]],
    rhs: impl Fn(f64, &[f64; N]) -> [f64; N],
) -> OdeResidual {
    let n = traj.len();
    let h = grid.dt();
    let cols: Vec<Vec<f64>> = (0..N).map(|j| ode::column(traj, j)).collect();
    let mut per_equation = vec![0.0f64; N];
    for k in 2..n.saturating_sub(2) {
        let f = rhs(grid.time(k), &traj[k]);
        for j in 0..N {
            let r = (ode::derivative(&cols[j], k, h) - f[j]).abs();
            per_equation[j] = per_equation[j].max(r);
        }
    }
    let max = per_equation.iter().cloned().fold(0.0, f64::max);
    OdeResidual { per_equation, max }
}

pub fn ode_residual_best_response(
    coeffs: &BestResponseCoeffs,
    params: &ModelParams,
    opponent: &OpponentStrategy,
) -> OdeResidual {
    trajectory_residual(&coeffs.grid, &coeffs.values, |t, w| {
        let opp = Affine::constant(opponent.eval(t));
        match coeffs.firm {
            Firm::One => firm1_rhs(params, w, &opp),
            Firm::Two => firm2_rhs(params, w, &opp),
        }
    })
}

pub fn ode_residual_nash(coeffs: &NashCoeffs, params: &ModelParams) -> OdeResidual {
    trajectory_residual(&coeffs.grid, &coeffs.values, |_t, y| nash_rhs(params, y))
}
