use nalgebra::DVector;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::filter::BackwardFilter;
use crate::guided::{fill_noise, noise_len, simulate_into, Workspace};
use crate::model::DiffusionModel;
use crate::numerics::RngStream;

/// Current state of one Metropolis–Hastings chain.
///
/// The chain lives on `(x0, noise)`; `states` and `log_psi` are the guided
/// path they map to under the current filter.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x0: DVector<f64>,
    pub noise: Vec<f64>,
    pub states: Vec<f64>,
    pub log_psi: f64,
    pub iteration: usize,
    pub accepted: usize,
    pub rng: RngStream,
}

/// Outcome of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub lambda: f64,
    /// `log Ψ` of the proposal; `None` when its simulation failed.
    pub proposal_log_psi: Option<f64>,
    /// `min(1, Ψ°/Ψ)`, 0 for a failed proposal, 1 when forced.
    pub accept_prob: f64,
    pub accepted: bool,
}

/// Proposal buffers and scratch space reused across iterations.
#[derive(Debug, Clone)]
pub struct ProposalBuffers {
    x0: DVector<f64>,
    noise: Vec<f64>,
    fresh: Vec<f64>,
    states: Vec<f64>,
    z: DVector<f64>,
    ws: Workspace,
}

impl ProposalBuffers {
    pub fn new(model: &dyn DiffusionModel, filter: &BackwardFilter) -> Self {
        let (d, dp) = (model.dim(), model.noise_dim());
        let n = noise_len(filter.grid(), dp);
        Self {
            x0: DVector::zeros(d),
            noise: vec![0.0; n],
            fresh: vec![0.0; n],
            states: vec![0.0; filter.grid().len() * d],
            z: DVector::zeros(d),
            ws: Workspace::new(d, dp),
        }
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }
}

/// Draws the persistence `λ = 1 - U`, `U ~ Beta(1, α)` (so `λ ~ Beta(α, 1)`),
/// kept inside `[0, 1)`. Large `α` puts the mass near 1 (small moves), small
/// `α` near 0 (close to independent proposals).
pub fn draw_lambda(alpha: f64, rng: &mut RngStream) -> Result<f64> {
    let beta = Beta::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(format!("Beta({alpha}, 1): {e}")))?;
    Ok(beta.sample(rng).min(1.0 - f64::EPSILON))
}

/// Preconditioned Crank–Nicolson proposal of `(x0, noise)` written into `buf`:
/// `x0° = ν(0) + √λ (x0 - ν(0)) + √(1-λ) Z` with `Z ~ N(0, H†(0))` and
/// `noise° = √λ noise + √(1-λ) W` with fresh increments `W`.
pub fn pcn_propose(
    x0: &DVector<f64>,
    noise: &[f64],
    lambda: f64,
    filter: &BackwardFilter,
    noise_dim: usize,
    rng: &mut RngStream,
    buf: &mut ProposalBuffers,
) {
    let (keep, mix) = (lambda.sqrt(), (1.0 - lambda).sqrt());
    rng.fill_standard_normal(buf.z.as_mut_slice());
    let nu0 = filter.initial_mean();
    buf.x0.copy_from(nu0);
    buf.x0.axpy(keep, x0, 1.0 - keep);
    buf.x0.gemv(mix, filter.initial_factor(), &buf.z, 1.0);
    fill_noise(filter.grid(), noise_dim, rng, &mut buf.fresh);
    for ((out, &cur), &w) in buf.noise.iter_mut().zip(noise).zip(&buf.fresh) {
        *out = keep * cur + mix * w;
    }
}

impl ChainState {
    /// Starts a chain at an independent draw `x0 ~ N(ν(0), H†(0))` with fresh noise.
    pub fn initialise(model: &dyn DiffusionModel, filter: &BackwardFilter, mut rng: RngStream) -> Result<Self> {
        let (d, dp) = (model.dim(), model.noise_dim());
        let mut ws = Workspace::new(d, dp);
        let mut noise = vec![0.0; noise_len(filter.grid(), dp)];
        let mut states = vec![0.0; filter.grid().len() * d];
        let mut last_err = None;
        for _ in 0..100 {
            let z = DVector::from_fn(d, |_, _| rng.standard_normal());
            let x0 = filter.initial_mean() + filter.initial_factor() * z;
            fill_noise(filter.grid(), dp, &mut rng, &mut noise);
            match simulate_into(model, filter, &x0, &noise, &mut ws, &mut states) {
                Ok(log_psi) => {
                    return Ok(Self {
                        x0,
                        noise,
                        states,
                        log_psi,
                        iteration: 0,
                        accepted: 0,
                        rng,
                    })
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    /// Recomputes the path and `log Ψ` from `(x0, noise)` under `filter`.
    pub fn refresh(&mut self, model: &dyn DiffusionModel, filter: &BackwardFilter) -> Result<()> {
        let mut ws = Workspace::new(model.dim(), model.noise_dim());
        self.log_psi = simulate_into(model, filter, &self.x0, &self.noise, &mut ws, &mut self.states)?;
        Ok(())
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.iteration == 0 {
            0.0
        } else {
            self.accepted as f64 / self.iteration as f64
        }
    }

    /// One Metropolis–Hastings update. `λ` does not enter the ratio.
    pub fn mh_step(
        &mut self,
        model: &dyn DiffusionModel,
        filter: &BackwardFilter,
        alpha: f64,
        force_accept: bool,
        buf: &mut ProposalBuffers,
    ) -> Result<StepOutcome> {
        let lambda = draw_lambda(alpha, &mut self.rng)?;
        pcn_propose(
            &self.x0,
            &self.noise,
            lambda,
            filter,
            model.noise_dim(),
            &mut self.rng,
            buf,
        );
        let sim = simulate_into(model, filter, &buf.x0, &buf.noise, &mut buf.ws, &mut buf.states);
        let log_u = self.rng.uniform().ln();
        self.iteration += 1;
        let (proposal_log_psi, accept_prob, accepted) = match sim {
            Ok(lp) => {
                let diff = lp - self.log_psi;
                let prob = diff.exp().min(1.0);
                (
                    Some(lp),
                    if force_accept { 1.0 } else { prob },
                    force_accept || log_u < diff,
                )
            }
            Err(e) => {
                log::debug!("iteration {}: proposal rejected ({e})", self.iteration);
                (None, 0.0, false)
            }
        };
        if accepted {
            std::mem::swap(&mut self.x0, &mut buf.x0);
            std::mem::swap(&mut self.noise, &mut buf.noise);
            std::mem::swap(&mut self.states, &mut buf.states);
            self.log_psi = proposal_log_psi.expect("accepted proposals were simulated");
            self.accepted += 1;
        }
        Ok(StepOutcome {
            lambda,
            proposal_log_psi,
            accept_prob,
            accepted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::run_backward;
    use crate::model::{ObservationSchedule, OrnsteinUhlenbeck, TimeGrid};
    use nalgebra::DMatrix;

    fn setup() -> (OrnsteinUhlenbeck, BackwardFilter) {
        let model = OrnsteinUhlenbeck::new(
            DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.3]),
            DVector::zeros(2),
            DMatrix::identity(2, 2) * 0.7,
        )
        .unwrap();
        let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let values: Vec<DVector<f64>> = [0.3, -0.5, 0.8].iter().map(|&v| DVector::from_element(1, v)).collect();
        let s = ObservationSchedule::constant(&[0.0, 0.5, 1.0], &values, &l, &(DMatrix::identity(1, 1) * 0.2), 0.1)
            .unwrap();
        let grid = TimeGrid::uniform(&s, 10).unwrap();
        let (filter, _) = run_backward(&s, &model.to_auxiliary(), &grid).unwrap();
        (model, filter)
    }

    #[test]
    fn lambda_in_unit_interval() {
        let mut rng = RngStream::new(1, 0);
        for alpha in [0.5, 5.0] {
            let draws: Vec<f64> = (0..20_000).map(|_| draw_lambda(alpha, &mut rng).unwrap()).collect();
            assert!(draws.iter().all(|&l| (0.0..1.0).contains(&l)));
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            assert!((mean - alpha / (1.0 + alpha)).abs() < 0.01);
        }
        assert!(draw_lambda(0.0, &mut rng).is_err());
    }

    #[test]
    fn lambda_zero_is_independent_of_current() {
        let (model, filter) = setup();
        let mut buf = ProposalBuffers::new(&model, &filter);
        let x0 = DVector::from_vec(vec![100.0, -100.0]);
        let noise = vec![50.0; buf.noise.len()];
        let mut a = RngStream::new(4, 0);
        let mut b = RngStream::new(4, 0);
        pcn_propose(&x0, &noise, 0.0, &filter, 2, &mut a, &mut buf);
        let first = (buf.x0.clone(), buf.noise.clone());
        pcn_propose(&(x0 * 0.0), &vec![0.0; noise.len()], 0.0, &filter, 2, &mut b, &mut buf);
        assert_eq!(first, (buf.x0.clone(), buf.noise.clone()));
    }

    #[test]
    fn deterministic_part_of_proposal() {
        let (model, filter) = setup();
        let mut buf = ProposalBuffers::new(&model, &filter);
        let x0 = DVector::from_vec(vec![1.0, 2.0]);
        let lambda: f64 = 0.99;
        let mut rng = RngStream::new(4, 0);
        let mut z = DVector::zeros(2);
        pcn_propose(&x0, &vec![0.0; buf.noise.len()], lambda, &filter, 2, &mut rng, &mut buf);
        // reproduce the fresh draw and remove it
        let mut rng = RngStream::new(4, 0);
        rng.fill_standard_normal(z.as_mut_slice());
        let fresh = filter.initial_factor() * z * (1.0 - lambda).sqrt();
        let nu0 = filter.initial_mean();
        let expected = nu0 + (&x0 - nu0) * lambda.sqrt();
        assert!((&buf.x0 - fresh - expected).amax() < 1e-14);
    }

    #[test]
    fn matched_model_accepts_everything() {
        let (model, filter) = setup();
        let mut chain = ChainState::initialise(&model, &filter, RngStream::new(2, 0)).unwrap();
        let mut buf = ProposalBuffers::new(&model, &filter);
        for _ in 0..500 {
            let out = chain.mh_step(&model, &filter, 5.0, false, &mut buf).unwrap();
            assert!(out.accepted);
            assert!(out.proposal_log_psi.unwrap().abs() <= 1e-10);
        }
        assert_eq!(chain.acceptance_rate(), 1.0);
    }

    #[test]
    fn stored_log_psi_matches_recomputation() {
        // filter built for the OU of `setup`, chain run on a different drift
        let (_, filter) = setup();
        let target = OrnsteinUhlenbeck::new(
            DMatrix::from_row_slice(2, 2, &[-1.5, 1.0, -1.0, 0.3]),
            DVector::from_vec(vec![0.5, 0.0]),
            DMatrix::identity(2, 2) * 0.7,
        )
        .unwrap();
        let mut chain = ChainState::initialise(&target, &filter, RngStream::new(8, 0)).unwrap();
        let mut buf = ProposalBuffers::new(&target, &filter);
        for _ in 0..200 {
            chain.mh_step(&target, &filter, 5.0, false, &mut buf).unwrap();
        }
        assert!(chain.accepted < chain.iteration);
        let stored = chain.log_psi;
        chain.refresh(&target, &filter).unwrap();
        assert!((chain.log_psi - stored).abs() <= 1e-10);
    }
}
