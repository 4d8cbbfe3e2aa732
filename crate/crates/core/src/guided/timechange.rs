use crate::error::{Error, Result};
use crate::model::ObservationSchedule;

/// Piecewise quadratic time change.
///
/// On each segment `[a, b]` between consecutive conditioning times,
/// `τ(s) = a + (s - a)(2 - (s - a)/(b - a))`, so `τ` fixes both ends,
/// `τ̇(a) = 2` and `τ̇(b) = 0`. A uniform grid in `s` therefore maps to knots
/// that crowd towards each observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChange {
    boundaries: Vec<f64>,
}

impl TimeChange {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 2 || boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "time change needs at least two strictly increasing boundaries".into(),
            ));
        }
        Ok(Self { boundaries })
    }

    /// Time change whose segments are delimited by the schedule's start and observation times.
    pub fn from_schedule(schedule: &ObservationSchedule) -> Self {
        Self::new(schedule.boundaries()).expect("schedule boundaries are strictly increasing")
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn segments(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Segment containing `s`; right endpoints belong to the segment they close.
    pub fn segment_of(&self, s: f64) -> usize {
        let j = self.boundaries.partition_point(|&b| b < s);
        j.saturating_sub(1).min(self.segments() - 1)
    }

    fn bounds(&self, segment: usize) -> (f64, f64) {
        (self.boundaries[segment], self.boundaries[segment + 1])
    }

    pub fn tau(&self, segment: usize, s: f64) -> f64 {
        let (a, b) = self.bounds(segment);
        let u = s - a;
        a + u * (2.0 - u / (b - a))
    }

    pub fn tau_dot(&self, segment: usize, s: f64) -> f64 {
        let (a, b) = self.bounds(segment);
        2.0 - 2.0 * (s - a) / (b - a)
    }

    pub fn tau_ddot(&self, segment: usize) -> f64 {
        let (a, b) = self.bounds(segment);
        -2.0 / (b - a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_segment_matches_closed_form() {
        let big_s = 2.5;
        let tc = TimeChange::new(vec![0.0, big_s]).unwrap();
        assert_eq!(tc.tau(0, big_s), big_s);
        assert_eq!(tc.tau_dot(0, big_s), 0.0);
        assert_eq!(tc.tau_dot(0, 0.0), 2.0);
        assert_eq!(tc.tau(0, big_s / 2.0), 0.75 * big_s);
        for k in 0..=10 {
            let s = big_s * k as f64 / 10.0;
            assert!((tc.tau(0, s) - s * (2.0 - s / big_s)).abs() < 1e-15);
        }
    }

    #[test]
    fn fixes_boundaries_and_increases() {
        let tc = TimeChange::new(vec![0.0, 0.3, 1.0, 1.1]).unwrap();
        for j in 0..tc.segments() {
            let (a, b) = (tc.boundaries()[j], tc.boundaries()[j + 1]);
            assert_eq!(tc.tau(j, a), a);
            assert!((tc.tau(j, b) - b).abs() < 1e-15);
            let mut prev = a;
            for k in 1..100 {
                let s = a + (b - a) * k as f64 / 100.0;
                let t = tc.tau(j, s);
                assert!(t > prev);
                assert!(tc.tau_dot(j, s) > 0.0);
                prev = t;
            }
        }
        assert_eq!(tc.segment_of(0.3), 0);
        assert_eq!(tc.segment_of(0.31), 1);
        assert_eq!(tc.segment_of(1.1), 2);
    }

    #[test]
    fn knots_crowd_towards_right_end() {
        // Counting oracle: a uniform s-grid of 100 steps on [0, 1]; knot t = 1 - (1 - u)^2.
        // Last 10% of the interval: (1 - u) <= sqrt(0.1) -> u in [0.6838, 1], 32 knots (u = 0.69..1.00).
        // Middle 10%: t in [0.45, 0.55] -> (1 - u) in [0.6708, 0.7416] -> u in [0.2584, 0.3292], 7 knots.
        let tc = TimeChange::new(vec![0.0, 1.0]).unwrap();
        let knots: Vec<f64> = (0..=100).map(|k| tc.tau(0, k as f64 / 100.0)).collect();
        let last = knots.iter().filter(|&&t| t >= 0.9).count();
        let middle = knots.iter().filter(|&&t| (0.45..=0.55).contains(&t)).count();
        assert_eq!(last, 32);
        assert_eq!(middle, 7);
        assert!(last >= 2 * middle);
    }
}
