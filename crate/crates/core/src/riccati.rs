//! Backward Riccati system for the principal's quadratic value function
//! `v(t, x) = ½ x·A(t) x + B(t)·x + C(t)`:
//!
//! ```text
//! dA/dt = -Q - A M A,                 A(T) = 0
//! dB/dt = -L - A M B,                 B(T) = 0
//! dC/dt = -½ Tr(ΣΣᵀ A) - ½ B·M B - q0, C(T) = 0
//! ```
//!
//! The same form is used for both contracting models; `C` carries the
//! constant part of `f - g` so that `v` solves the reduced equation exactly.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::contract::{assemble_lqg, ContractLQG, IncentiveRates, RateMap};
use crate::model::{ModelParams, ParamError, StateVector};
use crate::ode::{self, OdeError, TimeGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiccatiError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("time {t} outside [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("coefficient arrays do not match the grid ({0})")]
    Shape(String),
}

/// Packed state: `[A11, A12, A22, B1, B2, C]`.
type Packed = [f64; 6];

fn unpack(y: &Packed) -> (Matrix2<f64>, Vector2<f64>, f64) {
    (
        Matrix2::new(y[0], y[1], y[1], y[2]),
        Vector2::new(y[3], y[4]),
        y[5],
    )
}

/// Time derivative of `(A, B, C)` along the Riccati flow.
pub fn riccati_rhs(
    lqg: &ContractLQG,
    a: &Matrix2<f64>,
    b: &Vector2<f64>,
) -> (Matrix2<f64>, Vector2<f64>, f64) {
    let mut da = -lqg.q - a * lqg.m * a;
    da = 0.5 * (da + da.transpose());
    let db = -lqg.l - a * lqg.m * b;
    let dc = -0.5 * (lqg.diffusion() * a).trace() - 0.5 * b.dot(&(lqg.m * b)) - lqg.q0;
    (da, db, dc)
}

/// Time-sampled quadratic value function.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValueFn {
    grid: TimeGrid,
    a: Vec<Matrix2<f64>>,
    b: Vec<Vector2<f64>>,
    c: Vec<f64>,
    /// Packed time derivatives at the nodes, used for cubic Hermite
    /// interpolation; `None` falls back to linear interpolation.
    slopes: Option<Vec<Packed>>,
    lqg: ContractLQG,
}

fn pack(a: &Matrix2<f64>, b: &Vector2<f64>, c: f64) -> Packed {
    [a[(0, 0)], a[(0, 1)], a[(1, 1)], b[0], b[1], c]
}

impl QuadraticValueFn {
    /// Assembles a value function from tabulated coefficients. Used by tests
    /// and diagnostics that need to tamper with a solved trajectory. Node
    /// slopes are taken from finite differences of the data (five or more
    /// nodes), otherwise interpolation is linear.
    pub fn from_coefficients(
        grid: TimeGrid,
        a: Vec<Matrix2<f64>>,
        b: Vec<Vector2<f64>>,
        c: Vec<f64>,
        lqg: ContractLQG,
    ) -> Result<Self, RiccatiError> {
        let n = grid.n_nodes();
        if a.len() != n || b.len() != n || c.len() != n {
            return Err(RiccatiError::Shape(format!(
                "{} nodes, got {}/{}/{}",
                n,
                a.len(),
                b.len(),
                c.len()
            )));
        }
        let slopes = (n >= 5).then(|| {
            let packed: Vec<Packed> = (0..n).map(|k| pack(&a[k], &b[k], c[k])).collect();
            let cols: Vec<Vec<f64>> = (0..6).map(|j| ode::column(&packed, j)).collect();
            (0..n)
                .map(|k| std::array::from_fn(|j| ode::derivative(&cols[j], k, grid.dt())))
                .collect()
        });
        Ok(QuadraticValueFn {
            grid,
            a,
            b,
            c,
            slopes,
            lqg,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn lqg(&self) -> &ContractLQG {
        &self.lqg
    }

    pub fn a_nodes(&self) -> &[Matrix2<f64>] {
        &self.a
    }

    pub fn b_nodes(&self) -> &[Vector2<f64>] {
        &self.b
    }

    pub fn c_nodes(&self) -> &[f64] {
        &self.c
    }

    /// Copy with `C(t) ≡ 0`.
    pub fn without_constant(&self) -> Self {
        let slopes = self.slopes.as_ref().map(|s| {
            s.iter()
                .map(|d| {
                    let mut d = *d;
                    d[5] = 0.0;
                    d
                })
                .collect()
        });
        QuadraticValueFn {
            c: vec![0.0; self.c.len()],
            slopes,
            ..self.clone()
        }
    }

    /// Coefficients at `t`: cubic Hermite interpolation between nodes using
    /// the node slopes, exact at the nodes.
    pub fn coefficients(&self, t: f64) -> Result<(Matrix2<f64>, Vector2<f64>, f64), RiccatiError> {
        let (k, w) = self.grid.locate(t).ok_or(RiccatiError::OutOfHorizon {
            t,
            horizon: self.grid.t_end(),
        })?;
        let y0 = pack(&self.a[k], &self.b[k], self.c[k]);
        let y1 = pack(&self.a[k + 1], &self.b[k + 1], self.c[k + 1]);
        let y: Packed = match &self.slopes {
            Some(d) => {
                let h = self.grid.dt();
                let (w2, w3) = (w * w, w * w * w);
                let h00 = 2.0 * w3 - 3.0 * w2 + 1.0;
                let h10 = w3 - 2.0 * w2 + w;
                let h01 = -2.0 * w3 + 3.0 * w2;
                let h11 = w3 - w2;
                std::array::from_fn(|i| {
                    h00 * y0[i] + h10 * h * d[k][i] + h01 * y1[i] + h11 * h * d[k + 1][i]
                })
            }
            None => std::array::from_fn(|i| (1.0 - w) * y0[i] + w * y1[i]),
        };
        Ok(unpack(&y))
    }

    /// `(v(t, x), Dv(t, x))`.
    pub fn value_and_gradient(
        &self,
        t: f64,
        x: &StateVector,
    ) -> Result<(f64, Vector2<f64>), RiccatiError> {
        let (a, b, c) = self.coefficients(t)?;
        let ax = a * x;
        Ok((0.5 * x.dot(&ax) + b.dot(x) + c, ax + b))
    }

    pub fn value(&self, t: f64, x: &StateVector) -> Result<f64, RiccatiError> {
        Ok(self.value_and_gradient(t, x)?.0)
    }

    /// Time derivative of `v` implied by the Riccati right-hand side at the
    /// interpolated coefficients.
    pub fn time_derivative(&self, t: f64, x: &StateVector) -> Result<f64, RiccatiError> {
        let (a, b, _) = self.coefficients(t)?;
        let (da, db, dc) = riccati_rhs(&self.lqg, &a, &b);
        Ok(0.5 * x.dot(&(da * x)) + db.dot(x) + dc)
    }
}

pub fn solve_principal(params: &ModelParams) -> Result<QuadraticValueFn, RiccatiError> {
    let grid = TimeGrid::new(params.horizon(), ode::DEFAULT_NODES)?;
    solve_principal_on(params, &grid)
}

pub fn solve_principal_on(
    params: &ModelParams,
    grid: &TimeGrid,
) -> Result<QuadraticValueFn, RiccatiError> {
    let lqg = assemble_lqg(params)?;
    let rhs = |_t: f64, y: &Packed| -> Packed {
        let (a, b, _) = unpack(y);
        let (da, db, dc) = riccati_rhs(&lqg, &a, &b);
        [da[(0, 0)], da[(0, 1)], da[(1, 1)], db[0], db[1], dc]
    };
    let traj = ode::rk4_backward(rhs, [0.0; 6], grid)?;
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for y in &traj {
        let (ak, bk, ck) = unpack(y);
        a.push(ak);
        b.push(bk);
        c.push(ck);
    }
    let slopes = traj.iter().map(|y| rhs(0.0, y)).collect();
    Ok(QuadraticValueFn {
        grid: *grid,
        a,
        b,
        c,
        slopes: Some(slopes),
        lqg,
    })
}

/// Optimal rates at `(t, x)`: the closed-form maximizers applied to `Dv(t, x)`.
pub fn rate_profile(
    params: &ModelParams,
    v: &QuadraticValueFn,
    t: f64,
    x: &StateVector,
) -> Result<IncentiveRates, RiccatiError> {
    let (_, grad) = v.value_and_gradient(t, x)?;
    Ok(RateMap::new(params)?.apply(&grad))
}
