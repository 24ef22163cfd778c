//! Mean squared error between a saved trajectory and sampled targets.

use super::TrainError;
use crate::solver::Solution;

/// Samples of one channel at increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl TargetSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, TrainError> {
        if times.len() != values.len() {
            return Err(TrainError::InvalidTarget(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if let Some(i) = (1..times.len()).find(|&i| times[i] < times[i - 1]) {
            return Err(TrainError::InvalidTarget(format!(
                "time decreases at sample {i} (t = {})",
                times[i]
            )));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Samples with `t_start <= t < t_end`, or `t <= t_end` if `closed`.
    pub fn window(&self, t_start: f64, t_end: f64, closed: bool) -> TargetSeries {
        let keep = |t: f64| t >= t_start && (t < t_end || (closed && t <= t_end));
        let (times, values) = self
            .times
            .iter()
            .zip(&self.values)
            .filter(|(&t, _)| keep(t))
            .map(|(&t, &v)| (t, v))
            .unzip();
        TargetSeries { times, values }
    }
}

/// Row weights of the linear interpolation used by [`Solution::interpolate`].
fn bracket(times: &[f64], t: f64) -> [(usize, f64); 2] {
    let pos = times.partition_point(|&s| s <= t);
    if pos == 0 {
        return [(0, 1.0), (0, 0.0)];
    }
    let i = pos - 1;
    if i + 1 >= times.len() || times[i] == t {
        return [(i, 1.0), (i, 0.0)];
    }
    let w = (t - times[i]) / (times[i + 1] - times[i]);
    [(i, 1.0 - w), (i + 1, w)]
}

/// Same value as [`Solution::interpolate`] up to rounding.
fn predict(sol: &Solution, t: f64, channel: usize) -> f64 {
    bracket(&sol.times, t)
        .iter()
        .map(|&(i, w)| w * sol.states[i][channel])
        .sum()
}

fn check(sol: &Solution, target: &TargetSeries, channel: usize) -> Result<(), TrainError> {
    if target.is_empty() {
        return Err(TrainError::EmptyTarget);
    }
    if sol.is_empty() || channel >= sol.n_states() {
        return Err(TrainError::ChannelOutOfRange {
            channel,
            n_states: sol.n_states(),
        });
    }
    let (start, end) = (sol.times[0], sol.times[sol.len() - 1]);
    for &t in &target.times {
        if t < start || t > end {
            return Err(TrainError::TargetOutsideSolution { t, start, end });
        }
    }
    Ok(())
}

pub fn mse_loss(sol: &Solution, target: &TargetSeries, channel: usize) -> Result<f64, TrainError> {
    check(sol, target, channel)?;
    let sum: f64 = target
        .times
        .iter()
        .zip(&target.values)
        .map(|(&t, &y)| {
            let d = predict(sol, t, channel) - y;
            d * d
        })
        .sum();
    Ok(sum / target.len() as f64)
}

/// Loss together with its gradient with respect to every saved row.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub row_adjoints: Vec<Vec<f64>>,
}

pub fn mse_loss_with_rows(
    sol: &Solution,
    target: &TargetSeries,
    channel: usize,
) -> Result<LossGradient, TrainError> {
    check(sol, target, channel)?;
    let n = target.len() as f64;
    let mut rows = vec![vec![0.0; sol.n_states()]; sol.len()];
    let mut sum = 0.0;
    for (&t, &y) in target.times.iter().zip(&target.values) {
        let d = predict(sol, t, channel) - y;
        let br = bracket(&sol.times, t);
        sum += d * d;
        for (i, w) in br {
            rows[i][channel] += 2.0 * d * w / n;
        }
    }
    Ok(LossGradient {
        loss: sum / n,
        row_adjoints: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SolverStats;

    fn solution(times: Vec<f64>, values: Vec<f64>) -> Solution {
        Solution {
            model: "test".into(),
            states: values.iter().map(|&v| vec![v]).collect(),
            discrete: vec![vec![]; times.len()],
            times,
            event_log: vec![],
            stats: SolverStats::default(),
            wall_time: 0.0,
        }
    }

    #[test]
    fn exact_match_is_zero() {
        let sol = solution(vec![0.0, 1.0, 2.0], vec![1.0, 3.0, 2.0]);
        let target = TargetSeries::new(vec![0.0, 1.0, 2.0], vec![1.0, 3.0, 2.0]).unwrap();
        assert_eq!(mse_loss(&sol, &target, 0).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_square() {
        let sol = solution(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0, 4.0]);
        let target = TargetSeries::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.5, 2.5, 3.5, 4.5]).unwrap();
        assert_eq!(mse_loss(&sol, &target, 0).unwrap(), 0.25);
    }

    #[test]
    fn three_sample_case() {
        // (0-0)^2 + (2-1)^2 + (4-4)^2 over 3
        let sol = solution(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 4.0]);
        let target = TargetSeries::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 4.0]).unwrap();
        assert!((mse_loss(&sol, &target, 0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn interpolates_between_rows() {
        let sol = solution(vec![0.0, 2.0], vec![0.0, 4.0]);
        let target = TargetSeries::new(vec![0.5], vec![0.0]).unwrap();
        // prediction at 0.5 is 1.0
        assert_eq!(mse_loss(&sol, &target, 0).unwrap(), 1.0);
    }

    #[test]
    fn empty_and_out_of_span_targets_fail() {
        let sol = solution(vec![0.0, 1.0], vec![0.0, 1.0]);
        let empty = TargetSeries::new(vec![], vec![]).unwrap();
        assert!(matches!(mse_loss(&sol, &empty, 0), Err(TrainError::EmptyTarget)));
        let late = TargetSeries::new(vec![1.5], vec![0.0]).unwrap();
        assert!(matches!(
            mse_loss(&sol, &late, 0),
            Err(TrainError::TargetOutsideSolution { .. })
        ));
    }

    #[test]
    fn row_gradient_matches_finite_differences() {
        let times = vec![0.0, 0.3, 0.3, 1.0, 1.7];
        let values = vec![0.2, -0.4, 0.9, 1.3, 0.1];
        let target = TargetSeries::new(vec![0.0, 0.1, 0.3, 0.65, 1.7], vec![0.0, 0.5, 0.4, -0.2, 1.0]).unwrap();
        let sol = solution(times.clone(), values.clone());
        let g = mse_loss_with_rows(&sol, &target, 0).unwrap();
        assert_eq!(g.loss, mse_loss(&sol, &target, 0).unwrap());
        for r in 0..values.len() {
            let eps = 1e-6;
            let mut up = values.clone();
            up[r] += eps;
            let mut dn = values.clone();
            dn[r] -= eps;
            let fd = (mse_loss(&solution(times.clone(), up), &target, 0).unwrap()
                - mse_loss(&solution(times.clone(), dn), &target, 0).unwrap())
                / (2.0 * eps);
            assert!((fd - g.row_adjoints[r][0]).abs() < 1e-8, "row {r}: {fd} vs {}", g.row_adjoints[r][0]);
        }
    }

    #[test]
    fn window_splits_samples_once() {
        let target = TargetSeries::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0; 4]).unwrap();
        assert_eq!(target.window(0.0, 2.0, false).times, vec![0.0, 1.0]);
        assert_eq!(target.window(2.0, 3.0, true).times, vec![2.0, 3.0]);
    }
}
