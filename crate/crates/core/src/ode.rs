//! Uniform time grids, fixed-step backward RK4 and finite-difference stencils
//! for tabulated trajectories.

use serde::Serialize;
use thiserror::Error;

/// Magnitude above which a backward Riccati-type integration is treated as
/// having escaped to infinity.
pub const BLOW_UP_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("solution blew up at t = {t}")]
    BlowUp { t: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
}

/// Uniform grid `0 = t_0 < … < t_{n-1} = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t_end: f64,
    n_nodes: usize,
}

pub const DEFAULT_NODES: usize = 1001;

impl TimeGrid {
    pub fn new(t_end: f64, n_nodes: usize) -> Result<Self, OdeError> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(OdeError::InvalidGrid(format!("horizon {t_end}")));
        }
        if n_nodes < 2 {
            return Err(OdeError::InvalidGrid(format!("{n_nodes} nodes")));
        }
        Ok(TimeGrid { t_end, n_nodes })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_steps(&self) -> usize {
        self.n_nodes - 1
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps() as f64
    }

    /// Node time; the last node is exactly `T`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps() {
            self.t_end
        } else {
            self.t_end * k as f64 / self.n_steps() as f64
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes).map(|k| self.time(k))
    }

    /// Cell index `k` and weight `w` such that `t = (1-w) t_k + w t_{k+1}`.
    /// Returns `None` outside `[0, T]`.
    pub fn locate(&self, t: f64) -> Option<(usize, f64)> {
        if !(0.0..=self.t_end).contains(&t) {
            return None;
        }
        let s = t / self.dt();
        let k = (s.floor() as usize).min(self.n_steps() - 1);
        let w = (s - k as f64).clamp(0.0, 1.0);
        Some((k, w))
    }

    /// Node nearest to `t` (clamped to the grid).
    pub fn nearest(&self, t: f64) -> usize {
        ((t / self.dt()).round().max(0.0) as usize).min(self.n_steps())
    }
}

fn axpy<const N: usize>(y: &[f64; N], a: f64, x: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + a * x[i])
}

/// Classic RK4 marching from `T` down to `0` on `grid`.
///
/// `rhs(t, y)` is the time derivative `dy/dt`. The returned trajectory is
/// indexed by node (ascending time); the last entry is `terminal` itself.
pub fn rk4_backward<const N: usize>(
    rhs: impl Fn(f64, &[f64; N]) -> [f64; N],
    terminal: [f64; N],
    grid: &TimeGrid,
) -> Result<Vec<[f64; N]>, OdeError> {
    let n = grid.n_nodes();
    let h = -grid.dt();
    let mut out = vec![[0.0; N]; n];
    out[n - 1] = terminal;
    let mut y = terminal;
    for k in (0..n - 1).rev() {
        let t = grid.time(k + 1);
        let k1 = rhs(t, &y);
        let k2 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = rhs(t + h, &axpy(&y, h, &k3));
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        if y.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP_LIMIT) {
            return Err(OdeError::BlowUp { t: grid.time(k) });
        }
        out[k] = y;
    }
    Ok(out)
}

/// Fourth-order finite-difference derivative of uniformly sampled values at
/// index `k`: the five-point central stencil in the interior, five-point
/// one-sided stencils at the two nodes nearest each end.
pub fn derivative(values: &[f64], k: usize, h: f64) -> f64 {
    let n = values.len();
    assert!(n >= 5, "need at least five samples");
    let f = |i: usize| values[i];
    if k >= 2 && k + 2 < n {
        (f(k - 2) - 8.0 * f(k - 1) + 8.0 * f(k + 1) - f(k + 2)) / (12.0 * h)
    } else if k < 2 {
        let s = |i: usize| f(k + i);
        if k == 0 {
            (-25.0 * s(0) + 48.0 * s(1) - 36.0 * s(2) + 16.0 * s(3) - 3.0 * s(4)) / (12.0 * h)
        } else {
            // stencil k-1 .. k+3
            (-3.0 * f(k - 1) - 10.0 * f(k) + 18.0 * f(k + 1) - 6.0 * f(k + 2) + f(k + 3))
                / (12.0 * h)
        }
    } else if k == n - 1 {
        let s = |i: usize| f(k - i);
        (25.0 * s(0) - 48.0 * s(1) + 36.0 * s(2) - 16.0 * s(3) + 3.0 * s(4)) / (12.0 * h)
    } else {
        (3.0 * f(k + 1) + 10.0 * f(k) - 18.0 * f(k - 1) + 6.0 * f(k - 2) - f(k - 3)) / (12.0 * h)
    }
}

/// Column `j` of a tabulated trajectory.
pub fn column<const N: usize>(traj: &[[f64; N]], j: usize) -> Vec<f64> {
    traj.iter().map(|row| row[j]).collect()
}

/// Linear interpolation of a tabulated trajectory at time `t`.
pub fn interpolate<const N: usize>(grid: &TimeGrid, traj: &[[f64; N]], t: f64) -> Option<[f64; N]> {
    let (k, w) = grid.locate(t)?;
    let (a, b) = (&traj[k], &traj[k + 1]);
    Some(std::array::from_fn(|i| (1.0 - w) * a[i] + w * b[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_endpoints_exact() {
        let g = TimeGrid::new(0.7, 1001).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(1000), 0.7);
        assert!(g.times().zip(g.times().skip(1)).all(|(a, b)| b > a));
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(-1.0, 10).is_err());
        assert_eq!(g.locate(0.7), Some((999, 1.0)));
        assert_eq!(g.locate(0.8), None);
    }

    #[test]
    fn constant_rhs_zero() {
        let g = TimeGrid::new(1.0, 11).unwrap();
        let traj = rk4_backward(|_, _| [0.0, 0.0], [1.5, -2.0], &g).unwrap();
        assert!(traj.iter().all(|y| *y == [1.5, -2.0]));
    }

    #[test]
    fn tangent_riccati() {
        let g = TimeGrid::new(0.5, 1001).unwrap();
        let traj = rk4_backward(|_, y: &[f64; 1]| [-1.0 - y[0] * y[0]], [0.0], &g).unwrap();
        assert_abs_diff_eq!(traj[0][0], 0.5f64.tan(), epsilon = 1e-12);
        assert_abs_diff_eq!(traj[0][0], 0.546302, epsilon = 1e-6);
        assert_eq!(traj[1000][0], 0.0);
    }

    #[test]
    fn blow_up_detected() {
        // da/dτ = 1 + a² escapes at τ = π/2
        let g = TimeGrid::new(2.0, 2001).unwrap();
        let err = rk4_backward(|_, y: &[f64; 1]| [-1.0 - y[0] * y[0]], [0.0], &g).unwrap_err();
        let OdeError::BlowUp { t } = err else { panic!() };
        assert!((t - (2.0 - std::f64::consts::FRAC_PI_2)).abs() < 0.01);
    }

    #[test]
    fn stencils_are_fourth_order_exact_on_quartics() {
        let h = 0.1;
        let vals: Vec<f64> = (0..9).map(|i| (i as f64 * h).powi(4) - 2.0 * (i as f64 * h)).collect();
        for k in 0..9 {
            let t = k as f64 * h;
            assert_abs_diff_eq!(derivative(&vals, k, h), 4.0 * t.powi(3) - 2.0, epsilon = 1e-10);
        }
    }
}
