//! Fixed-step ODE integration, SPD linear algebra and random streams.

mod linalg;
mod rk;
mod rng;

pub use linalg::{
    asymmetry, cholesky, spd_inverse, spd_solve, symmetrize, symmetrize_mut, woodbury_downdate, SpdMatrix, SYMMETRY_TOL,
};
pub use rk::{integrate, RkTableau};
pub use rng::RngStream;
