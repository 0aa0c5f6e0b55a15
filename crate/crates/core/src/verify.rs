//! Independent checks of solved value functions: HJB residuals on space-time
//! grids, finite-difference validation of analytic derivatives, and
//! sup-consistency of the closed-form Hamiltonian maximum.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::Serialize;

use crate::contract::{
    effective_aversions, gradient_coupling, hamiltonian_h, maximize_h, optimal_rates, OracleError,
    OracleOptions,
};
use crate::model::{Firm, ModelParams, ParamError, RevenueScope, StateVector};
use crate::nash::{feedback_gain, running_reward, w_gradient, NashCoeffs};
use crate::ode::{self, TimeGrid};
use crate::riccati::QuadraticValueFn;

/// Square spatial grid `[-bound, bound]²` with `n_points` per axis, sampled at
/// fractions of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub bound: f64,
    pub n_points: usize,
    pub time_fractions: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            bound: 2.0,
            n_points: 21,
            time_fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl GridSpec {
    pub fn axis(&self) -> Vec<f64> {
        let n = self.n_points.max(2);
        (0..n)
            .map(|i| -self.bound + 2.0 * self.bound * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// Node indices of the coefficient grid nearest to the requested times.
    pub fn time_nodes(&self, grid: &TimeGrid) -> Vec<usize> {
        self.time_fractions
            .iter()
            .map(|f| grid.nearest(f * grid.t_end()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub t: f64,
    pub x: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceMax {
    pub t: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub grid: GridSpec,
    pub max: f64,
    pub argmax: GridPoint,
    pub slices: Vec<SliceMax>,
}

/// Evaluates `residual(k, x)` on every grid node; slices run in parallel and
/// are merged in time order.
fn scan_grid(
    spec: &GridSpec,
    grid: &TimeGrid,
    residual: impl Fn(usize, &StateVector) -> f64 + Sync,
) -> ResidualReport {
    let axis = spec.axis();
    let nodes = spec.time_nodes(grid);
    let per_slice: Vec<(f64, GridPoint)> = nodes
        .par_iter()
        .map(|&k| {
            let t = grid.time(k);
            let mut best = (0.0f64, GridPoint { t, x: [axis[0], axis[0]] });
            for &x1 in &axis {
                for &x2 in &axis {
                    let r = residual(k, &StateVector::new(x1, x2)).abs();
                    // NaN propagates as the worst value
                    if r > best.0 || r.is_nan() && !best.0.is_nan() {
                        best = (r, GridPoint { t, x: [x1, x2] });
                    }
                }
            }
            best
        })
        .collect();
    let mut max = 0.0f64;
    let mut argmax = per_slice
        .first()
        .map(|s| s.1)
        .unwrap_or(GridPoint { t: 0.0, x: [0.0; 2] });
    for (r, p) in &per_slice {
        if *r > max || r.is_nan() && !max.is_nan() {
            max = *r;
            argmax = *p;
        }
    }
    ResidualReport {
        grid: spec.clone(),
        max,
        argmax,
        slices: per_slice
            .iter()
            .map(|(r, p)| SliceMax { t: p.t, max: *r })
            .collect(),
    }
}

fn column_derivatives(grid: &TimeGrid, cols: &[Vec<f64>], k: usize) -> Vec<f64> {
    cols.iter()
        .map(|c| ode::derivative(c, k, grid.dt()))
        .collect()
}

/// Residual of the principal's reduced equation
///
/// ```text
/// ∂t v + ½ Σ σi² ∂ii v + f - g - ½ η_p Σ σi² (∂i v)² + h(z*(Dv), Dv)
/// ```
///
/// with `∂t v` from finite differences of the coefficient trajectories and
/// `h` evaluated at the closed-form rates.
pub fn hjb_residual_principal(
    v: &QuadraticValueFn,
    params: &ModelParams,
    spec: &GridSpec,
) -> Result<ResidualReport, ParamError> {
    let eta_p = params.require_principal()?.eta_p;
    params.social_cost(&StateVector::zeros())?;
    let grid = *v.grid();
    let (a, b, c) = (v.a_nodes(), v.b_nodes(), v.c_nodes());
    let cols: Vec<Vec<f64>> = vec![
        a.iter().map(|m| m[(0, 0)]).collect(),
        a.iter().map(|m| m[(0, 1)]).collect(),
        a.iter().map(|m| m[(1, 1)]).collect(),
        b.iter().map(|m| m[0]).collect(),
        b.iter().map(|m| m[1]).collect(),
        c.to_vec(),
    ];
    let derivs: Vec<Vec<f64>> = (0..grid.n_nodes())
        .map(|k| column_derivatives(&grid, &cols, k))
        .collect();
    let s2 = Firm::BOTH.map(|f| params.sigma(f).powi(2));
    Ok(scan_grid(spec, &grid, |k, x| {
        let d = &derivs[k];
        let da = Matrix2::new(d[0], d[1], d[1], d[2]);
        let db = Vector2::new(d[3], d[4]);
        let v_t = 0.5 * x.dot(&(da * x)) + db.dot(x) + d[5];
        let grad = a[k] * x + b[k];
        let z = optimal_rates(params, &grad).expect("kind checked above");
        let h = hamiltonian_h(params, &z, &grad).expect("kind checked above");
        let f = params.revenue(x, RevenueScope::Total);
        let g = params.social_cost(x).expect("kind checked above");
        v_t + 0.5 * (s2[0] * a[k][(0, 0)] + s2[1] * a[k][(1, 1)]) + f - g
            - 0.5 * eta_p * (s2[0] * grad[0] * grad[0] + s2[1] * grad[1] * grad[1])
            + h
    }))
}

/// Pointwise residual of both firms' equations
///
/// ```text
/// ∂t W + ½σ1²(η W_x² + W_xx) + ½σ2²(η W_y² + W_yy) + a¹ W_x + a² W_y - (r - c(a_own))
/// ```
///
/// with each firm's own control `-γ ∂own W` and the opponent's feedback
/// rebuilt from its coefficients.
pub fn hjb_residual_nash(
    coeffs: &NashCoeffs,
    params: &ModelParams,
    spec: &GridSpec,
) -> (ResidualReport, ResidualReport) {
    let grid = coeffs.grid;
    let cols: Vec<Vec<f64>> = (0..12).map(|j| ode::column(&coeffs.values, j)).collect();
    let derivs: Vec<Vec<f64>> = (0..grid.n_nodes())
        .map(|k| column_derivatives(&grid, &cols, k))
        .collect();
    let (s1, s2) = (params.sigma(Firm::One).powi(2), params.sigma(Firm::Two).powi(2));
    let residual = |firm: Firm| {
        let derivs = &derivs;
        move |k: usize, s: &StateVector| {
            let own = coeffs.firm(firm, k);
            let d = &derivs[k][6 * firm.index()..6 * firm.index() + 6];
            let d: [f64; 6] = std::array::from_fn(|i| d[i]);
            let w_t = crate::nash::w_value(&d, s);
            let (wx, wy) = w_gradient(&own, s);
            let a1 = feedback_gain(params, Firm::One, &coeffs.firm(Firm::One, k)).eval(s);
            let a2 = feedback_gain(params, Firm::Two, &coeffs.firm(Firm::Two, k)).eval(s);
            let a_own = if firm == Firm::One { a1 } else { a2 };
            let eta = params.eta(firm);
            w_t + 0.5 * s1 * (eta * wx * wx + own[0])
                + 0.5 * s2 * (eta * wy * wy + own[1])
                + a1 * wx
                + a2 * wy
                - (running_reward(params, firm, s) - params.effort_cost(a_own, firm))
        }
    };
    (
        scan_grid(spec, &grid, residual(Firm::One)),
        scan_grid(spec, &grid, residual(Firm::Two)),
    )
}

/// A value function with analytic space and time derivatives.
pub trait ValueFunction {
    fn value(&self, t: f64, x: &StateVector) -> f64;
    fn gradient(&self, t: f64, x: &StateVector) -> Vector2<f64>;
    fn hessian(&self, t: f64, x: &StateVector) -> Matrix2<f64>;
    fn time_derivative(&self, t: f64, x: &StateVector) -> f64;
}

impl ValueFunction for QuadraticValueFn {
    fn value(&self, t: f64, x: &StateVector) -> f64 {
        self.value_and_gradient(t, x).expect("t within horizon").0
    }

    fn gradient(&self, t: f64, x: &StateVector) -> Vector2<f64> {
        self.value_and_gradient(t, x).expect("t within horizon").1
    }

    fn hessian(&self, t: f64, _x: &StateVector) -> Matrix2<f64> {
        self.coefficients(t).expect("t within horizon").0
    }

    fn time_derivative(&self, t: f64, x: &StateVector) -> f64 {
        QuadraticValueFn::time_derivative(self, t, x).expect("t within horizon")
    }
}

/// Worst relative errors `|numeric - analytic| / max(1, |analytic|)` of each
/// derivative family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdErrors {
    pub gradient: f64,
    pub hessian: f64,
    pub time: f64,
}

impl FdErrors {
    pub fn max(&self) -> f64 {
        self.gradient.max(self.hessian).max(self.time)
    }
}

fn rel_err(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / analytic.abs().max(1.0)
}

/// Central-difference check of the analytic gradient, Hessian (differences of
/// the analytic gradient) and time derivative at `(t, x)` with step `h`.
/// The time stencil is one-sided where `t ± h` leaves `[t_min, t_max]`.
pub fn finite_diff_check(
    f: &impl ValueFunction,
    t: f64,
    x: &StateVector,
    h: f64,
    t_range: (f64, f64),
) -> FdErrors {
    let grad = f.gradient(t, x);
    let hess = f.hessian(t, x);
    let mut gradient = 0.0f64;
    let mut hessian = 0.0f64;
    for i in 0..2 {
        let e = Vector2::ith(i, h);
        let num = (f.value(t, &(x + e)) - f.value(t, &(x - e))) / (2.0 * h);
        gradient = gradient.max(rel_err(num, grad[i]));
        let dg = (f.gradient(t, &(x + e)) - f.gradient(t, &(x - e))) / (2.0 * h);
        for j in 0..2 {
            hessian = hessian.max(rel_err(dg[j], hess[(j, i)]));
        }
    }
    let (lo, hi) = t_range;
    let num_t = if t - h >= lo && t + h <= hi {
        (f.value(t + h, x) - f.value(t - h, x)) / (2.0 * h)
    } else if t + 2.0 * h <= hi {
        (-3.0 * f.value(t, x) + 4.0 * f.value(t + h, x) - f.value(t + 2.0 * h, x)) / (2.0 * h)
    } else {
        (3.0 * f.value(t, x) - 4.0 * f.value(t - h, x) + f.value(t - 2.0 * h, x)) / (2.0 * h)
    };
    FdErrors {
        gradient,
        hessian,
        time: rel_err(num_t, f.time_derivative(t, x)),
    }
}

/// Closed-form maximum of `h`: `½ Σ mi vi² + ½ η_p Σ σi² vi²`.
pub fn closed_form_sup(params: &ModelParams, m: [f64; 2], grad_v: &Vector2<f64>) -> Result<f64, ParamError> {
    let eta_p = params.require_principal()?.eta_p;
    Ok(Firm::BOTH
        .iter()
        .map(|&f| {
            let v = grad_v[f.index()];
            0.5 * m[f.index()] * v * v + 0.5 * eta_p * params.sigma(f).powi(2) * v * v
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SupError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// `|max_z h (brute force) - closed-form maximum|` with coupling `m`.
pub fn sup_consistency_with(
    params: &ModelParams,
    grad_v: &Vector2<f64>,
    m: [f64; 2],
    options: &OracleOptions,
) -> Result<f64, SupError> {
    let closed = closed_form_sup(params, m, grad_v)?;
    let (_, brute) = maximize_h(params, grad_v, options)?;
    Ok((brute - closed).abs())
}

/// Sup-consistency gap of the coupling coefficients used by the solver.
pub fn sup_consistency(
    params: &ModelParams,
    grad_v: &Vector2<f64>,
    options: &OracleOptions,
) -> Result<f64, SupError> {
    sup_consistency_with(params, grad_v, gradient_coupling(params)?, options)
}

/// Two-firm coupling with `+η̄σ²` in place of `-η̄σ²`; kept as a negative
/// control for the sign used by the solver.
pub fn flipped_sign_coupling(params: &ModelParams) -> Result<[f64; 2], ParamError> {
    let bar = effective_aversions(params)?.eta_bar;
    Ok(Firm::BOTH.map(|f| {
        let g = params.gamma(f);
        let s2 = params.sigma(f).powi(2);
        let b = bar[f.other().index()];
        (g + b * s2).powi(2) / (g + (params.eta(f) + b) * s2) + b * s2
    }))
}
