//! Optimal incentive rates for the contracting models and the reduction of
//! the principal's HJB equation to a linear-quadratic form.
//!
//! Writing the principal's value as `V(t, x, y) = -exp(-η_p (v(t, x) - y))`,
//! the reduced equation for `v` is
//!
//! ```text
//! 0 = ∂t v + ½ Σ σ_i² (v_ii - η_p v_i²) + f(x) - g(x) + sup_z h(z, Dv)
//! ```
//!
//! where `h` is concave quadratic in the rates. Completing the square gives
//! the closed-form maximizers and
//!
//! ```text
//! sup_z h - ½ η_p Σ σ_i² v_i² = ½ Σ m_i v_i²
//! ```
//!
//! so that the whole equation takes the form
//! `0 = ∂t v + ½ x·Qx + L·x + q0 + ½ Tr(ΣΣᵀ D²v) + ½ Dv·M Dv`.
//!
//! Single firm: `m_i = (γ_i + σ_i² η_p)² / (γ_i + (η_p + η_A) σ_i²) - η_p σ_i²`.
//!
//! Two firms: `m_i = (γ_i + η̄_j σ_i²)² / (γ_i + (η_i + η̄_j) σ_i²) - η̄_j σ_i²`,
//! with `η̄_j = η_p η_j / (η_p + η_j)`. The correction `η̄_j σ_i²` is subtracted;
//! [`verify::sup_consistency`](crate::verify::sup_consistency) checks this
//! against a brute-force maximization of `h`.

use nalgebra::{Matrix2, Vector2};
use serde::Serialize;
use thiserror::Error;

use crate::model::{Firm, ModelKind, ModelParams, ParamError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("maximizer on the search box boundary (half width {half_width})")]
    MaximizerOnBoundary { half_width: f64 },
    #[error("empty search box")]
    EmptyBox,
}

/// Harmonic aversions `η̄_i = η_p η_i / (η_p + η_i)` and ratios
/// `η_ip = η_p / (η_i + η_p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveRiskAversion {
    pub eta_bar: [f64; 2],
    pub eta_ratio: [f64; 2],
}

impl EffectiveRiskAversion {
    pub fn eta_bar(&self, firm: Firm) -> f64 {
        self.eta_bar[firm.index()]
    }

    pub fn eta_ratio(&self, firm: Firm) -> f64 {
        self.eta_ratio[firm.index()]
    }
}

pub fn effective_aversions(params: &ModelParams) -> Result<EffectiveRiskAversion, ParamError> {
    params.require_kind(ModelKind::TwoFirmRegulated)?;
    let eta_p = params.require_principal()?.eta_p;
    let mut out = EffectiveRiskAversion {
        eta_bar: [0.0; 2],
        eta_ratio: [0.0; 2],
    };
    for firm in Firm::BOTH {
        let eta = params.eta(firm);
        out.eta_bar[firm.index()] = eta_p * eta / (eta_p + eta);
        out.eta_ratio[firm.index()] = eta_p / (eta + eta_p);
    }
    Ok(out)
}

/// `(Λ12, Λ21)`, the share of the marginal value passed on to each firm
/// through its own-state rate.
pub fn lambda_pair(params: &ModelParams) -> Result<(f64, f64), ParamError> {
    let aversion = effective_aversions(params)?;
    let lam = |firm: Firm| {
        let gamma = params.gamma(firm);
        let s2 = params.sigma(firm).powi(2);
        let bar = aversion.eta_bar(firm.other());
        (gamma + bar * s2) / (gamma + (params.eta(firm) + bar) * s2)
    };
    Ok((lam(Firm::One), lam(Firm::Two)))
}

/// Payment sensitivities to the state increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IncentiveRates {
    /// `z[i]` multiplies `dX^i`.
    Single { z: [f64; 2] },
    /// `z[i][j]` is firm `i`'s sensitivity to `dX^j`.
    TwoFirm { z: [[f64; 2]; 2] },
}

impl IncentiveRates {
    pub fn zero(kind: ModelKind) -> Self {
        match kind {
            ModelKind::SingleFirm => IncentiveRates::Single { z: [0.0; 2] },
            _ => IncentiveRates::TwoFirm { z: [[0.0; 2]; 2] },
        }
    }

    /// Number of free rates for a model kind.
    pub fn dimension(kind: ModelKind) -> usize {
        match kind {
            ModelKind::SingleFirm => 2,
            _ => 4,
        }
    }

    /// Flattened rates: `[z1, z2]` or `[z11, z12, z21, z22]`.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            IncentiveRates::Single { z } => z.to_vec(),
            IncentiveRates::TwoFirm { z } => vec![z[0][0], z[0][1], z[1][0], z[1][1]],
        }
    }

    pub fn from_slice(kind: ModelKind, v: &[f64]) -> Self {
        match kind {
            ModelKind::SingleFirm => IncentiveRates::Single { z: [v[0], v[1]] },
            _ => IncentiveRates::TwoFirm {
                z: [[v[0], v[1]], [v[2], v[3]]],
            },
        }
    }

    /// Own-state rate of technology/firm `firm` (`z_i` or `z_ii`).
    pub fn own(&self, firm: Firm) -> f64 {
        let i = firm.index();
        match self {
            IncentiveRates::Single { z } => z[i],
            IncentiveRates::TwoFirm { z } => z[i][i],
        }
    }

    /// Induced efforts `â_i = γ_i z_ii`.
    pub fn efforts(&self, params: &ModelParams) -> [f64; 2] {
        Firm::BOTH.map(|f| params.gamma(f) * self.own(f))
    }
}

/// Closed-form maximizers as a linear map of the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateMap {
    kind: ModelKind,
    own: [f64; 2],
    cross: [f64; 2],
}

impl RateMap {
    pub fn new(params: &ModelParams) -> Result<Self, ParamError> {
        match params.kind() {
            ModelKind::SingleFirm => {
                let pr = params.require_principal()?;
                let own = Firm::BOTH.map(|f| {
                    let g = params.gamma(f);
                    let s2 = params.sigma(f).powi(2);
                    (g + s2 * pr.eta_p) / (s2 * pr.eta_p + g + params.eta(f) * s2)
                });
                Ok(RateMap {
                    kind: ModelKind::SingleFirm,
                    own,
                    cross: [0.0; 2],
                })
            }
            ModelKind::TwoFirmRegulated => {
                let (l12, l21) = lambda_pair(params)?;
                let ratio = effective_aversions(params)?.eta_ratio;
                Ok(RateMap {
                    kind: ModelKind::TwoFirmRegulated,
                    own: [l12, l21],
                    // z12 = η1p (v2 - z22), z21 = η2p (v1 - z11)
                    cross: [ratio[0] * (1.0 - l21), ratio[1] * (1.0 - l12)],
                })
            }
            ModelKind::TwoFirmNash => Err(ParamError::WrongKind {
                expected: "a model with a principal",
                found: ModelKind::TwoFirmNash,
            }),
        }
    }

    pub fn apply(&self, grad_v: &Vector2<f64>) -> IncentiveRates {
        let (v1, v2) = (grad_v[0], grad_v[1]);
        match self.kind {
            ModelKind::SingleFirm => IncentiveRates::Single {
                z: [self.own[0] * v1, self.own[1] * v2],
            },
            _ => IncentiveRates::TwoFirm {
                z: [
                    [self.own[0] * v1, self.cross[0] * v2],
                    [self.cross[1] * v1, self.own[1] * v2],
                ],
            },
        }
    }
}

pub fn rates_single(
    params: &ModelParams,
    grad_v: &Vector2<f64>,
) -> Result<IncentiveRates, ParamError> {
    params.require_kind(ModelKind::SingleFirm)?;
    Ok(RateMap::new(params)?.apply(grad_v))
}

pub fn rates_two(params: &ModelParams, grad_v: &Vector2<f64>) -> Result<IncentiveRates, ParamError> {
    params.require_kind(ModelKind::TwoFirmRegulated)?;
    let (l12, l21) = lambda_pair(params)?;
    let ratio = effective_aversions(params)?.eta_ratio;
    let z11 = l12 * grad_v[0];
    let z22 = l21 * grad_v[1];
    Ok(IncentiveRates::TwoFirm {
        z: [
            [z11, ratio[0] * (grad_v[1] - z22)],
            [ratio[1] * (grad_v[0] - z11), z22],
        ],
    })
}

/// Rates for whichever contracting model `params` describes.
pub fn optimal_rates(
    params: &ModelParams,
    grad_v: &Vector2<f64>,
) -> Result<IncentiveRates, ParamError> {
    match params.kind() {
        ModelKind::SingleFirm => rates_single(params, grad_v),
        _ => rates_two(params, grad_v),
    }
}

/// Risk premium `R(z)` owed to the two agents.
pub fn risk_premium(params: &ModelParams, z: &[[f64; 2]; 2]) -> f64 {
    let (s1, s2) = (params.sigma(Firm::One).powi(2), params.sigma(Firm::Two).powi(2));
    let (e1, e2) = (params.eta(Firm::One), params.eta(Firm::Two));
    0.5 * (e1 * s1 * z[0][0].powi(2)
        + e1 * s2 * z[0][1].powi(2)
        + e2 * s2 * z[1][1].powi(2)
        + e2 * s1 * z[1][0].powi(2))
}

/// Loadings `(σ̂1, σ̂2)` of the aggregate payment on the two Brownian motions.
pub fn payment_volatility(params: &ModelParams, z: &[[f64; 2]; 2]) -> [f64; 2] {
    [
        (z[0][0] + z[1][0]) * params.sigma(Firm::One),
        (z[1][1] + z[0][1]) * params.sigma(Firm::Two),
    ]
}

/// Drift objective maximized by the principal, as a function of the rates
/// and of the gradient of `v` (the state enters only through `Dv`).
pub fn hamiltonian_h(
    params: &ModelParams,
    z: &IncentiveRates,
    grad_v: &Vector2<f64>,
) -> Result<f64, ParamError> {
    let eta_p = params.require_principal()?.eta_p;
    let (v1, v2) = (grad_v[0], grad_v[1]);
    let (s1, s2) = (params.sigma(Firm::One), params.sigma(Firm::Two));
    let (g1, g2) = (params.gamma(Firm::One), params.gamma(Firm::Two));
    match (params.kind(), z) {
        (ModelKind::SingleFirm, IncentiveRates::Single { z }) => {
            let spread = s1 * s1 * z[0] * z[0] + s2 * s2 * z[1] * z[1];
            let cost = params.effort_cost(g1 * z[0], Firm::One)
                + params.effort_cost(g2 * z[1], Firm::Two);
            Ok(g1 * z[0] * v1 + g2 * z[1] * v2 + s1 * s1 * z[0] * eta_p * v1
                + s2 * s2 * z[1] * eta_p * v2
                - 0.5 * spread * eta_p
                - cost
                - 0.5 * params.eta(Firm::One) * spread)
        }
        (ModelKind::TwoFirmRegulated, IncentiveRates::TwoFirm { z }) => {
            let cost = params.effort_cost(g1 * z[0][0], Firm::One)
                + params.effort_cost(g2 * z[1][1], Firm::Two);
            let [h1, h2] = payment_volatility(params, z);
            Ok(g1 * z[0][0] * v1 + g2 * z[1][1] * v2
                - (cost + risk_premium(params, z))
                - 0.5 * eta_p * (h1 * h1 + h2 * h2)
                + s1 * eta_p * h1 * v1
                + s2 * eta_p * h2 * v2)
        }
        _ => Err(ParamError::WrongKind {
            expected: "rates matching the model kind",
            found: params.kind(),
        }),
    }
}

/// Gradient-coupling coefficients `(m1, m2)` of the reduced equation.
pub fn gradient_coupling(params: &ModelParams) -> Result<[f64; 2], ParamError> {
    let pr = params.require_principal()?;
    match params.kind() {
        ModelKind::SingleFirm => Ok(Firm::BOTH.map(|f| {
            let g = params.gamma(f);
            let s2 = params.sigma(f).powi(2);
            (g + s2 * pr.eta_p).powi(2) / (s2 * pr.eta_p + g + params.eta(f) * s2) - pr.eta_p * s2
        })),
        _ => {
            let bar = effective_aversions(params)?.eta_bar;
            Ok(Firm::BOTH.map(|f| {
                let g = params.gamma(f);
                let s2 = params.sigma(f).powi(2);
                let b = bar[f.other().index()];
                (g + b * s2).powi(2) / (g + (params.eta(f) + b) * s2) - b * s2
            }))
        }
    }
}

/// Linear-quadratic data of the principal's reduced HJB equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractLQG {
    pub q: Matrix2<f64>,
    pub l: Vector2<f64>,
    pub q0: f64,
    pub m: Matrix2<f64>,
    pub sigma: Matrix2<f64>,
}

impl ContractLQG {
    pub fn diffusion(&self) -> Matrix2<f64> {
        self.sigma * self.sigma.transpose()
    }
}

pub fn assemble_lqg(params: &ModelParams) -> Result<ContractLQG, ParamError> {
    let net = params.revenue_quadratic() - params.social_cost_quadratic()?;
    let [m1, m2] = gradient_coupling(params)?;
    Ok(ContractLQG {
        q: net.q,
        l: net.l,
        q0: net.c,
        m: Matrix2::new(m1, 0.0, 0.0, m2),
        sigma: Matrix2::new(params.sigma(Firm::One), 0.0, 0.0, params.sigma(Firm::Two)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub half_width: f64,
    pub coarse_n: usize,
    pub tol: f64,
    /// Largest half width reached by automatic box doubling.
    pub max_half_width: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            half_width: 10.0,
            coarse_n: 201,
            tol: 1e-10,
            max_half_width: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub argmax: Vec<f64>,
    pub value: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden_max(f: &mut dyn FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Brute-force maximizer of a concave objective on a box: per-coordinate
/// coarse grid scan, golden-section refinement, then a three-point parabolic
/// step (exact for quadratics, and immune to the flat-top cancellation that
/// limits golden section to about `sqrt(eps)`). Coordinates are cycled until
/// a sweep moves no coordinate by more than `tol`.
pub fn argmax_oracle(
    objective: &dyn Fn(&[f64]) -> f64,
    bounds: &[(f64, f64)],
    coarse_n: usize,
    tol: f64,
) -> Result<OracleResult, OracleError> {
    if bounds.is_empty() || bounds.iter().any(|(lo, hi)| !(hi > lo)) || coarse_n < 3 {
        return Err(OracleError::EmptyBox);
    }
    let mut z: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let mut spacing = vec![0.0; bounds.len()];

    for _sweep in 0..500 {
        let mut moved = 0.0f64;
        for k in 0..bounds.len() {
            let (lo, hi) = bounds[k];
            let step = (hi - lo) / (coarse_n - 1) as f64;
            spacing[k] = step;
            let mut probe = z.clone();
            let mut eval = |t: f64| {
                probe[k] = t;
                objective(&probe)
            };
            let (mut best_i, mut best_f) = (0usize, f64::NEG_INFINITY);
            for i in 0..coarse_n {
                let fi = eval(lo + step * i as f64);
                if fi > best_f {
                    best_f = fi;
                    best_i = i;
                }
            }
            let center = lo + step * best_i as f64;
            let a = (center - step).max(lo);
            let b = (center + step).min(hi);
            let mut t = golden_max(&mut eval, a, b, tol);

            let s = 1e-3 * (1.0 + t.abs());
            if t - s >= lo && t + s <= hi {
                let (fm, f0, fp) = (eval(t - s), eval(t), eval(t + s));
                let curv = fp - 2.0 * f0 + fm;
                if curv < 0.0 {
                    let cand = t - 0.5 * s * (fp - fm) / curv;
                    if (cand - t).abs() <= s && eval(cand) >= f0 {
                        t = cand;
                    }
                }
            }
            moved = moved.max((t - z[k]).abs());
            z[k] = t;
        }
        if moved <= tol {
            break;
        }
    }

    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        if z[k] - lo < spacing[k] || hi - z[k] < spacing[k] {
            return Err(OracleError::MaximizerOnBoundary {
                half_width: 0.5 * (hi - lo),
            });
        }
    }
    let value = objective(&z);
    Ok(OracleResult { argmax: z, value })
}

/// [`argmax_oracle`] on the symmetric box `[-w, w]^dim`, doubling `w` while
/// the maximizer sits on the boundary.
pub fn argmax_oracle_auto(
    objective: &dyn Fn(&[f64]) -> f64,
    dim: usize,
    options: &OracleOptions,
) -> Result<OracleResult, OracleError> {
    let mut w = options.half_width;
    loop {
        let bounds = vec![(-w, w); dim];
        match argmax_oracle(objective, &bounds, options.coarse_n, options.tol) {
            Err(OracleError::MaximizerOnBoundary { .. }) if 2.0 * w <= options.max_half_width => {
                w *= 2.0;
            }
            other => return other,
        }
    }
}

/// Brute-force maximization of [`hamiltonian_h`] over all rates.
pub fn maximize_h(
    params: &ModelParams,
    grad_v: &Vector2<f64>,
    options: &OracleOptions,
) -> Result<(IncentiveRates, f64), OracleError> {
    let kind = params.kind();
    let objective = |v: &[f64]| {
        hamiltonian_h(params, &IncentiveRates::from_slice(kind, v), grad_v)
            .expect("kind checked by caller")
    };
    let res = argmax_oracle_auto(&objective, IncentiveRates::dimension(kind), options)?;
    Ok((IncentiveRates::from_slice(kind, &res.argmax), res.value))
}
