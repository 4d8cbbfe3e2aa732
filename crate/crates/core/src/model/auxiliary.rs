use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Values that can be linearly interpolated.
pub trait Lerp: Clone {
    fn lerp(&self, other: &Self, w: f64) -> Self;
}

impl Lerp for DVector<f64> {
    fn lerp(&self, other: &Self, w: f64) -> Self {
        self * (1.0 - w) + other * w
    }
}

impl Lerp for DMatrix<f64> {
    fn lerp(&self, other: &Self, w: f64) -> Self {
        self * (1.0 - w) + other * w
    }
}

/// Piecewise-linear table over increasing times; constant extrapolation.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear<T> {
    times: Vec<f64>,
    values: Vec<T>,
}

impl<T: Lerp> PiecewiseLinear<T> {
    pub fn new(times: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "table needs matching non-empty times/values, got {} and {}",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("table times must be strictly increasing".into()));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> T {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1].clone();
        }
        let j = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        self.values[j - 1].lerp(&self.values[j], (t - t0) / (t1 - t0))
    }
}

/// A coefficient of the auxiliary process as a function of time.
///
/// `Segmented` holds one table per inter-observation segment so that
/// coefficients may jump at observation times.
#[derive(Clone)]
pub enum TimeFunction<T> {
    Constant(T),
    Closure(Arc<dyn Fn(f64) -> T + Send + Sync>),
    Segmented(Vec<PiecewiseLinear<T>>),
}

impl<T: Lerp> TimeFunction<T> {
    pub fn eval(&self, segment: usize, t: f64) -> T {
        match self {
            Self::Constant(v) => v.clone(),
            Self::Closure(f) => f(t),
            Self::Segmented(tables) => tables[segment.min(tables.len() - 1)].eval(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }
}

impl<T: fmt::Debug> fmt::Debug for TimeFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::Closure(_) => f.write_str("Closure(..)"),
            Self::Segmented(t) => write!(f, "Segmented({} segments)", t.len()),
        }
    }
}

/// Linear auxiliary diffusion `dX̃ = (β̃(t) + B̃(t) X̃) dt + σ̃(t) dW`.
#[derive(Debug, Clone)]
pub struct LinearAuxiliary {
    dim: usize,
    noise_dim: usize,
    beta: TimeFunction<DVector<f64>>,
    bmat: TimeFunction<DMatrix<f64>>,
    sigma: TimeFunction<DMatrix<f64>>,
}

impl LinearAuxiliary {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        beta: TimeFunction<DVector<f64>>,
        bmat: TimeFunction<DMatrix<f64>>,
        sigma: TimeFunction<DMatrix<f64>>,
    ) -> Result<Self> {
        let aux = Self {
            dim,
            noise_dim,
            beta,
            bmat,
            sigma,
        };
        // probe shapes at t = 0 of the first segment
        let (b, bm, s) = (aux.beta(0, 0.0), aux.bmat(0, 0.0), aux.sigma(0, 0.0));
        if b.len() != dim || bm.shape() != (dim, dim) || s.shape() != (dim, noise_dim) {
            return Err(Error::Dimension(format!(
                "auxiliary with d={dim}, d'={noise_dim}: beta has length {}, B is {:?}, sigma is {:?}",
                b.len(),
                bm.shape(),
                s.shape()
            )));
        }
        Ok(aux)
    }

    pub fn constant(beta: DVector<f64>, bmat: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let (d, dp) = sigma.shape();
        Self::new(
            d,
            dp,
            TimeFunction::Constant(beta),
            TimeFunction::Constant(bmat),
            TimeFunction::Constant(sigma),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn is_constant(&self) -> bool {
        self.beta.is_constant() && self.bmat.is_constant() && self.sigma.is_constant()
    }

    pub fn beta(&self, segment: usize, t: f64) -> DVector<f64> {
        self.beta.eval(segment, t)
    }

    pub fn bmat(&self, segment: usize, t: f64) -> DMatrix<f64> {
        self.bmat.eval(segment, t)
    }

    pub fn sigma(&self, segment: usize, t: f64) -> DMatrix<f64> {
        self.sigma.eval(segment, t)
    }

    /// `ã(t) = σ̃(t) σ̃(t)ᵀ`.
    pub fn atilde(&self, segment: usize, t: f64) -> DMatrix<f64> {
        let s = self.sigma(segment, t);
        &s * s.transpose()
    }

    /// Auxiliary drift `β̃(t) + B̃(t) x`.
    pub fn drift(&self, segment: usize, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self.beta(segment, t) + self.bmat(segment, t) * x
    }

    pub fn beta_fn(&self) -> &TimeFunction<DVector<f64>> {
        &self.beta
    }

    pub fn bmat_fn(&self) -> &TimeFunction<DMatrix<f64>> {
        &self.bmat
    }

    pub fn sigma_fn(&self) -> &TimeFunction<DMatrix<f64>> {
        &self.sigma
    }

    /// Same process with the drift coefficients replaced.
    pub fn with_drift(&self, beta: TimeFunction<DVector<f64>>, bmat: TimeFunction<DMatrix<f64>>) -> Result<Self> {
        Self::new(self.dim, self.noise_dim, beta, bmat, self.sigma.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_interpolates_and_clamps() {
        let tab = PiecewiseLinear::new(
            vec![0.0, 1.0, 3.0],
            vec![
                DVector::from_element(1, 0.0),
                DVector::from_element(1, 2.0),
                DVector::from_element(1, -2.0),
            ],
        )
        .unwrap();
        assert_eq!(tab.eval(-1.0)[0], 0.0);
        assert_eq!(tab.eval(0.5)[0], 1.0);
        assert_eq!(tab.eval(1.0)[0], 2.0);
        assert_eq!(tab.eval(2.0)[0], 0.0);
        assert_eq!(tab.eval(9.0)[0], -2.0);
    }

    #[test]
    fn table_rejects_unsorted_times() {
        let v = vec![DVector::zeros(1), DVector::zeros(1)];
        assert!(PiecewiseLinear::new(vec![1.0, 1.0], v).is_err());
    }

    #[test]
    fn segmented_coefficients_jump_between_segments() {
        let seg = |v: f64| {
            PiecewiseLinear::new(
                vec![0.0, 1.0],
                vec![DVector::from_element(1, v), DVector::from_element(1, v)],
            )
            .unwrap()
        };
        let f = TimeFunction::Segmented(vec![seg(1.0), seg(5.0)]);
        assert_eq!(f.eval(0, 1.0)[0], 1.0);
        assert_eq!(f.eval(1, 1.0)[0], 5.0);
    }

    #[test]
    fn atilde_is_psd_for_closure_sigma() {
        let aux = LinearAuxiliary::new(
            2,
            1,
            TimeFunction::Constant(DVector::zeros(2)),
            TimeFunction::Constant(DMatrix::zeros(2, 2)),
            TimeFunction::Closure(Arc::new(|t: f64| DMatrix::from_column_slice(2, 1, &[t.sin(), 1.0 + t]))),
        )
        .unwrap();
        for k in 0..20 {
            let a = aux.atilde(0, 0.3 * k as f64);
            assert_eq!(a, a.transpose());
            assert!(a.symmetric_eigenvalues().min() >= -1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let res = LinearAuxiliary::constant(DVector::zeros(3), DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        assert!(matches!(res, Err(Error::Dimension(_))));
    }
}
