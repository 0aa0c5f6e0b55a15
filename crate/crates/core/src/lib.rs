//! Linear-quadratic production models with moral hazard: optimal contracts
//! for a regulator facing one or two firms, and feedback Nash equilibria of an
//! unregulated duopoly, together with numerical verification and Monte Carlo
//! tooling.

pub mod cli;
pub mod contract;
pub mod mc;
pub mod model;
pub mod nash;
pub mod ode;
pub mod riccati;
pub mod verify;
