use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, SpdMatrix};

/// One observation `v = L x(t) + η`, `η ~ N(0, Σ)`.
#[derive(Debug, Clone)]
pub struct Observation {
    pub t: f64,
    pub l: DMatrix<f64>,
    pub sigma: SpdMatrix,
    pub v: DVector<f64>,
}

impl Observation {
    pub fn new(t: f64, l: DMatrix<f64>, sigma: DMatrix<f64>, v: DVector<f64>) -> Result<Self> {
        let sigma = SpdMatrix::new(sigma, &format!("Sigma at t = {t}"))?;
        if sigma.dim() != l.nrows() || v.len() != l.nrows() {
            return Err(Error::Dimension(format!(
                "observation at t = {t}: L is {}x{}, Sigma is {}x{}, v has length {}",
                l.nrows(),
                l.ncols(),
                sigma.dim(),
                sigma.dim(),
                v.len()
            )));
        }
        Ok(Self { t, l, sigma, v })
    }

    pub fn obs_dim(&self) -> usize {
        self.l.nrows()
    }

    /// `Lᵀ Σ⁻¹ L`.
    pub fn information(&self) -> DMatrix<f64> {
        self.l.transpose() * self.sigma.solve(&self.l)
    }

    /// `Lᵀ Σ⁻¹ v`.
    pub fn information_vector(&self) -> DVector<f64> {
        let sv = self
            .sigma
            .solve(&DMatrix::from_column_slice(self.v.len(), 1, self.v.as_slice()));
        self.l.transpose() * sv.column(0)
    }
}

/// Ordered observations on `[start, t_n]` plus the terminal regularisation `ε`.
#[derive(Debug, Clone)]
pub struct ObservationSchedule {
    start: f64,
    dim: usize,
    observations: Vec<Observation>,
    epsilon: f64,
}

impl ObservationSchedule {
    /// `start` is the left end of the smoothing window; an observation may sit exactly at it.
    pub fn new(start: f64, observations: Vec<Observation>, epsilon: f64) -> Result<Self> {
        let last = observations
            .last()
            .ok_or_else(|| Error::Schedule("at least one observation is required".into()))?;
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Schedule(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        if !start.is_finite() || observations[0].t < start {
            return Err(Error::Schedule(format!(
                "first observation time {} precedes start {start}",
                observations[0].t
            )));
        }
        if observations.iter().any(|o| !o.t.is_finite()) {
            return Err(Error::Schedule("observation times must be finite".into()));
        }
        if let Some(i) = observations.windows(2).position(|w| !(w[0].t < w[1].t)) {
            return Err(Error::Schedule(format!(
                "observation times not strictly increasing at index {} ({} then {})",
                i + 1,
                observations[i].t,
                observations[i + 1].t
            )));
        }
        if last.t <= start {
            return Err(Error::Schedule(
                "the window [start, t_n] must have positive length".into(),
            ));
        }
        let dim = last.l.ncols();
        if let Some(i) = observations.iter().position(|o| o.l.ncols() != dim) {
            return Err(Error::Dimension(format!(
                "observation {i}: L has {} columns, expected {dim}",
                observations[i].l.ncols()
            )));
        }
        let terminal = last.information() + DMatrix::identity(dim, dim) * epsilon;
        if cholesky(&terminal, "terminal information").is_err() {
            return Err(Error::Config(
                "terminal information L_n' Sigma_n^-1 L_n + eps I is singular; \
                 the last observation does not determine the full state, use epsilon > 0"
                    .into(),
            ));
        }
        Ok(Self {
            start,
            dim,
            observations,
            epsilon,
        })
    }

    /// Observations `v_i` at `times[i]` sharing one `L` and `Σ`; the window starts at `times[0]`.
    pub fn constant(
        times: &[f64],
        values: &[DVector<f64>],
        l: &DMatrix<f64>,
        sigma: &DMatrix<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::Schedule(format!(
                "{} times but {} observation vectors",
                times.len(),
                values.len()
            )));
        }
        let obs = times
            .iter()
            .zip(values)
            .map(|(&t, v)| Observation::new(t, l.clone(), sigma.clone(), v.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(times[0], obs, epsilon)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.observations.last().expect("non-empty").t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn last(&self) -> &Observation {
        self.observations.last().expect("non-empty")
    }

    /// True when an observation sits exactly at the window start.
    pub fn observed_at_start(&self) -> bool {
        self.observations[0].t == self.start
    }

    /// Segment boundaries: the start followed by every observation time after it.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b = vec![self.start];
        b.extend(self.observations.iter().map(|o| o.t).filter(|&t| t > self.start));
        b
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.start, self.observations.clone(), epsilon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(t: f64) -> Observation {
        Observation::new(t, DMatrix::identity(2, 2), DMatrix::identity(2, 2), DVector::zeros(2)).unwrap()
    }

    #[test]
    fn partial_terminal_requires_epsilon() {
        let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let s = DMatrix::identity(1, 1);
        let v = [DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)];
        let err = ObservationSchedule::constant(&[0.0, 1.0], &v, &l, &s, 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(ObservationSchedule::constant(&[0.0, 1.0], &v, &l, &s, 5e-4).is_ok());
    }

    #[test]
    fn boundaries_with_and_without_start_observation() {
        let s = ObservationSchedule::new(0.0, vec![obs(0.0), obs(1.0)], 0.0).unwrap();
        assert!(s.observed_at_start());
        assert_eq!(s.boundaries(), vec![0.0, 1.0]);
        let s = ObservationSchedule::new(-1.0, vec![obs(0.0), obs(1.0)], 0.0).unwrap();
        assert!(!s.observed_at_start());
        assert_eq!(s.boundaries(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn information_form() {
        let o = Observation::new(
            0.0,
            DMatrix::from_row_slice(1, 2, &[2.0, 0.0]),
            DMatrix::from_element(1, 1, 4.0),
            DVector::from_element(1, 3.0),
        )
        .unwrap();
        assert_eq!(o.information(), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(o.information_vector(), DVector::from_vec(vec![1.5, 0.0]));
    }

    proptest! {
        #[test]
        fn rejects_non_increasing_times(
            mut times in prop::collection::vec(-10.0f64..10.0, 2..8),
            swap in 0usize..7,
        ) {
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let i = swap % (times.len() - 1);
            times[i + 1] = times[i]; // introduce a tie
            let observations = times.iter().map(|&t| obs(t)).collect();
            prop_assert!(ObservationSchedule::new(times[0], observations, 0.0).is_err());
        }

        #[test]
        fn rejects_non_spd_noise(a in -2.0f64..2.0, b in 2.0f64..5.0, d in -2.0f64..2.0) {
            // |b| > max(|a|, |d|) makes [[a, b], [b, d]] indefinite
            let sigma = DMatrix::from_row_slice(2, 2, &[a, b, b, d]);
            let res = Observation::new(0.0, DMatrix::identity(2, 2), sigma, DVector::zeros(2));
            prop_assert!(res.is_err());
        }
    }
}
