//! Splitting a training window into consecutive elements.

use super::loss::TargetSeries;
use super::TrainError;
use crate::hybrid_ode::{HybridModel, ModelError, ModelState, Snapshot};
use crate::solver::{self, SolveResult, Solution, SolverOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchElement {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Target samples with `t_start <= t < t_end`; the last element also
    /// owns the sample at `t_end`.
    pub target: TargetSeries,
    /// Model memory at `t_start`, present in snapshot batching.
    pub snapshot: Option<Snapshot>,
}

/// Consecutive elements of length `element_length` covering `[t0, t_end]`.
/// The last one may be shorter.
pub fn make_batches_sequential(
    t0: f64,
    t_end: f64,
    element_length: f64,
    target: &TargetSeries,
) -> Result<Vec<BatchElement>, TrainError> {
    if !(element_length > 0.0) || !element_length.is_finite() {
        return Err(TrainError::InvalidConfig(format!(
            "batch element length must be positive, got {element_length}"
        )));
    }
    if !(t_end > t0) {
        return Err(TrainError::InvalidConfig(format!("empty training window [{t0}, {t_end}]")));
    }
    // a ratio that is integral up to rounding must not spawn a sliver element
    let count = (((t_end - t0) / element_length) - 1e-9).ceil().max(1.0) as usize;
    let elements = (0..count)
        .map(|k| {
            let t_start = t0 + k as f64 * element_length;
            let last = k + 1 == count;
            let end = if last {
                t_end
            } else {
                t0 + (k + 1) as f64 * element_length
            };
            BatchElement {
                index: k,
                t_start,
                t_end: end,
                target: target.window(t_start, end, last),
                snapshot: None,
            }
        })
        .collect();
    Ok(elements)
}

/// Simulates the elements in order, each starting where the previous one
/// ended.
pub fn simulate_sequential<M: HybridModel + ?Sized>(
    model: &M,
    start: &ModelState,
    elements: &[BatchElement],
    opts: &SolverOptions,
) -> Result<Vec<SolveResult>, TrainError> {
    let mut state = start.clone();
    let mut out = Vec::with_capacity(elements.len());
    for el in elements {
        state.t = el.t_start;
        let res = solver::solve(model, &state, el.t_end, opts)?;
        state = res.final_state.clone();
        out.push(res);
    }
    Ok(out)
}

/// Joins consecutive element solutions, dropping each repeated start row.
pub fn concatenate(parts: &[Solution]) -> Option<Solution> {
    let mut iter = parts.iter();
    let mut joined = iter.next()?.clone();
    for part in iter {
        joined.times.extend_from_slice(&part.times[1..]);
        joined.states.extend_from_slice(&part.states[1..]);
        joined.discrete.extend_from_slice(&part.discrete[1..]);
        joined.event_log.extend_from_slice(&part.event_log);
        let (a, b) = (&mut joined.stats, &part.stats);
        a.accepted_steps += b.accepted_steps;
        a.rejected_steps += b.rejected_steps;
        a.n_state_events += b.n_state_events;
        a.n_time_events += b.n_time_events;
        a.rhs_evaluations += b.rhs_evaluations;
        joined.wall_time += part.wall_time;
    }
    Some(joined)
}

/// Sequential elements whose start memory is cached from one in-order pass
/// with the current parameters. The cache is not refreshed by later
/// parameter updates.
pub fn make_batches_snapshot<M: HybridModel + ?Sized>(
    model: &M,
    start: &ModelState,
    element_length: f64,
    t_end: f64,
    target: &TargetSeries,
    opts: &SolverOptions,
) -> Result<Vec<BatchElement>, TrainError> {
    let mut elements = make_batches_sequential(start.t, t_end, element_length, target)?;
    let mut state = start.clone();
    for el in elements.iter_mut() {
        state.t = el.t_start;
        el.snapshot = Some(Snapshot::from_parts(model.name(), state.clone()));
        state = solver::solve(model, &state, el.t_end, opts)?.final_state;
    }
    Ok(elements)
}

/// Start state of an element taken from its snapshot.
pub fn restore_start<M: HybridModel + ?Sized>(
    model: &M,
    element: &BatchElement,
) -> Result<ModelState, TrainError> {
    let snap = element
        .snapshot
        .as_ref()
        .ok_or(TrainError::MissingSnapshot { element: element.index })?;
    if snap.model_name() != model.name() {
        return Err(ModelError::SnapshotMismatch {
            expected: model.name().to_string(),
            found: snap.model_name().to_string(),
        }
        .into());
    }
    Ok(snap.state().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid_ode::DampedOscillator;

    fn samples(t0: f64, t_end: f64, dt: f64) -> TargetSeries {
        let n = ((t_end - t0) / dt).round() as usize;
        let times: Vec<f64> = (0..=n).map(|i| t0 + i as f64 * dt).collect();
        TargetSeries::new(times.clone(), vec![0.0; times.len()]).unwrap()
    }

    #[test]
    fn long_window_gives_101_elements() {
        let els = make_batches_sequential(0.0, 1001.22, 10.0, &samples(0.0, 1001.0, 1.0)).unwrap();
        assert_eq!(els.len(), 101);
        let last = els.last().unwrap();
        assert!((last.t_end - last.t_start - 1.22).abs() < 1e-9);
        assert_eq!(last.t_end, 1001.22);
    }

    #[test]
    fn cover_is_contiguous_and_samples_are_split_once() {
        let target = samples(0.0, 120.0, 0.1);
        let els = make_batches_sequential(0.0, 120.0, 10.0, &target).unwrap();
        assert_eq!(els.len(), 12);
        for w in els.windows(2) {
            assert_eq!(w[0].t_end, w[1].t_start);
        }
        let total: usize = els.iter().map(|e| e.target.len()).sum();
        assert_eq!(total, target.len());
    }

    #[test]
    fn long_element_gives_one() {
        let els = make_batches_sequential(0.0, 5.0, 50.0, &samples(0.0, 5.0, 1.0)).unwrap();
        assert_eq!(els.len(), 1);
        assert_eq!(els[0].target.len(), 6);
    }

    #[test]
    fn non_positive_length_is_rejected() {
        assert!(make_batches_sequential(0.0, 5.0, 0.0, &samples(0.0, 5.0, 1.0)).is_err());
    }

    #[test]
    fn snapshot_restore_matches_in_order_pass() {
        let m = DampedOscillator::default();
        let start = m.initial_state(0.0);
        let target = samples(0.0, 6.0, 0.5);
        let opts = SolverOptions::default();
        let els = make_batches_snapshot(&m, &start, 2.0, 6.0, &target, &opts).unwrap();
        let in_order = simulate_sequential(&m, &start, &els, &opts).unwrap();
        for k in [2usize, 0, 1] {
            let s = restore_start(&m, &els[k]).unwrap();
            let res = solver::solve(&m, &s, els[k].t_end, &opts).unwrap();
            assert!(res.solution.same_trajectory(&in_order[k].solution));
        }
    }
}
