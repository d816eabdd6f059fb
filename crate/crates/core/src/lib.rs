//! Policy optimization for mixed H2/H∞ state-feedback control.
//!
//! The crate covers discrete- and continuous-time plants:
//!
//! * [`matlin`]: stability tests and Lyapunov solvers.
//! * [`riccati`]: policy-evaluation Riccati equations and the optimal
//!   modified Riccati recursion.
//! * [`norms`]: H∞ and H2 norms and feasible-set membership.
//! * [`polgrad`]: exact policy gradient, natural gradient and Gauss-Newton
//!   updates with their iteration driver.
//! * [`leqg`]: the risk-sensitive LEQG layer.
//! * [`lqgame`]: zero-sum LQ games and their Riccati solution.
//! * [`zeroth`]: simulation and zeroth-order (model-free) gradient estimation.
//!
//! Built-in benchmark instances live in [`cases`].

pub mod cases;
pub mod error;
pub mod leqg;
pub mod lqgame;
pub mod matlin;
pub mod norms;
pub mod plant;
pub mod polgrad;
pub mod riccati;
pub mod zeroth;

pub use error::{Error, Result};
pub use matlin::Mat;
pub use plant::{Plant, PolicyGain, TimeDomain};
