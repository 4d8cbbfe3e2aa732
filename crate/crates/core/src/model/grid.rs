use crate::error::{Error, Result};
use crate::guided::TimeChange;
use crate::model::ObservationSchedule;

/// Simulation grid over `[start, t_n]`.
///
/// Segment boundaries (the start and every observation time) are knots.
/// Each segment holds `steps_per_segment` steps, uniform either in `t` or,
/// with a time change, in the clock `s` with knots `t = τ(s)`.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    knots: Vec<f64>,
    clock: Vec<f64>,
    boundary_knots: Vec<usize>,
    obs_knots: Vec<usize>,
    step_segment: Vec<usize>,
    time_change: Option<TimeChange>,
}

impl TimeGrid {
    /// Uniform steps within each segment.
    pub fn uniform(schedule: &ObservationSchedule, steps_per_segment: usize) -> Result<Self> {
        Self::build(schedule, steps_per_segment, None)
    }

    /// Uniform steps in the time-change clock; knots are their images under `τ`.
    pub fn time_changed(schedule: &ObservationSchedule, steps_per_segment: usize) -> Result<Self> {
        Self::build(schedule, steps_per_segment, Some(TimeChange::from_schedule(schedule)))
    }

    fn build(
        schedule: &ObservationSchedule,
        steps_per_segment: usize,
        time_change: Option<TimeChange>,
    ) -> Result<Self> {
        if steps_per_segment == 0 {
            return Err(Error::InvalidArgument("steps per segment must be >= 1".into()));
        }
        let bounds = schedule.boundaries();
        let mut knots = vec![bounds[0]];
        let mut clock = vec![bounds[0]];
        let mut boundary_knots = vec![0];
        let mut step_segment = Vec::new();
        for (seg, w) in bounds.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            for k in 1..=steps_per_segment {
                let s = if k == steps_per_segment {
                    b
                } else {
                    a + (b - a) * k as f64 / steps_per_segment as f64
                };
                let t = match &time_change {
                    Some(tc) if k < steps_per_segment => tc.tau(seg, s),
                    _ => s,
                };
                if !(t > *knots.last().expect("non-empty")) {
                    return Err(Error::InvalidArgument(format!(
                        "grid is not strictly increasing near t = {t}"
                    )));
                }
                knots.push(t);
                clock.push(s);
                step_segment.push(seg);
            }
            boundary_knots.push(knots.len() - 1);
        }
        let offset = usize::from(!schedule.observed_at_start());
        let obs_knots = (0..schedule.len()).map(|i| boundary_knots[i + offset]).collect();
        Ok(Self {
            knots,
            clock,
            boundary_knots,
            obs_knots,
            step_segment,
            time_change,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Clock values `s_k`; equal to the knots without a time change.
    pub fn clock(&self) -> &[f64] {
        &self.clock
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn segments(&self) -> usize {
        self.boundary_knots.len() - 1
    }

    /// Knot indices of the segment boundaries.
    pub fn boundary_knots(&self) -> &[usize] {
        &self.boundary_knots
    }

    /// Knot index of each observation, in schedule order.
    pub fn obs_knots(&self) -> &[usize] {
        &self.obs_knots
    }

    /// Segment that step `k` (from knot `k` to `k + 1`) belongs to.
    pub fn segment_of_step(&self, k: usize) -> usize {
        self.step_segment[k]
    }

    pub fn time_change(&self) -> Option<&TimeChange> {
        self.time_change.as_ref()
    }

    pub fn step_size(&self, k: usize) -> f64 {
        self.knots[k + 1] - self.knots[k]
    }

    /// Index of the knot nearest to `t`.
    pub fn nearest_knot(&self, t: f64) -> usize {
        let j = self.knots.partition_point(|&s| s < t);
        if j == 0 {
            0
        } else if j >= self.knots.len() {
            self.knots.len() - 1
        } else if (self.knots[j] - t).abs() < (t - self.knots[j - 1]).abs() {
            j
        } else {
            j - 1
        }
    }

    /// True if step `k` is the last of its segment.
    pub fn closes_segment(&self, k: usize) -> bool {
        self.boundary_knots.binary_search(&(k + 1)).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Observation;
    use nalgebra::{DMatrix, DVector};

    fn schedule(start: f64, times: &[f64]) -> ObservationSchedule {
        let obs = times
            .iter()
            .map(|&t| Observation::new(t, DMatrix::identity(1, 1), DMatrix::identity(1, 1), DVector::zeros(1)).unwrap())
            .collect();
        ObservationSchedule::new(start, obs, 0.0).unwrap()
    }

    #[test]
    fn observation_times_are_exact_knots() {
        let s = schedule(0.0, &[0.0, 0.1, 0.35, 1.0]);
        for grid in [
            TimeGrid::uniform(&s, 7).unwrap(),
            TimeGrid::time_changed(&s, 7).unwrap(),
        ] {
            assert_eq!(grid.steps(), 21);
            for (o, &k) in s.observations().iter().zip(grid.obs_knots()) {
                assert_eq!(grid.knots()[k], o.t);
            }
            assert!(grid.knots().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn start_without_observation_adds_a_segment() {
        let s = schedule(-0.5, &[0.0, 1.0]);
        let grid = TimeGrid::uniform(&s, 4).unwrap();
        assert_eq!(grid.segments(), 2);
        assert_eq!(grid.obs_knots(), &[4, 8]);
        assert_eq!(grid.knots()[0], -0.5);
        assert_eq!(grid.segment_of_step(3), 0);
        assert_eq!(grid.segment_of_step(4), 1);
        assert!(grid.closes_segment(3));
        assert!(!grid.closes_segment(4));
    }

    #[test]
    fn time_changed_knots_are_tau_images() {
        let s = schedule(0.0, &[0.0, 2.0]);
        let grid = TimeGrid::time_changed(&s, 4).unwrap();
        let expected = [0.0, 0.875, 1.5, 1.875, 2.0];
        for (a, b) in grid.knots().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(grid.clock(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn nearest_knot_lookup() {
        let s = schedule(0.0, &[0.0, 1.0]);
        let grid = TimeGrid::uniform(&s, 10).unwrap();
        assert_eq!(grid.nearest_knot(0.52), 5);
        assert_eq!(grid.nearest_knot(-3.0), 0);
        assert_eq!(grid.nearest_knot(7.0), 10);
    }
}
