//! Adaptive Dormand–Prince integration of hybrid models with exact time
//! events, bisection-located state events and an optional step tape.

mod dopri;
mod io;
mod tape;

use std::cell::Cell;
use std::time::Instant;

use log::debug;
use thiserror::Error;

use crate::hybrid_ode::{EventKind, HybridModel, ModelError, ModelState};

pub use dopri::{dense_weights, A, B, C, E, P, STAGES};
pub use io::{read_solution_csv, write_solution_csv, SolutionFile, SolutionIoError};
pub use tape::{Tape, TapeEntry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid integration interval [{t0}, {t_end}]")]
    InvalidInterval { t0: f64, t_end: f64 },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step size underflow at t = {t} (h = {h:e}), state {state:?}")]
    StepSizeUnderflow { t: f64, h: f64, state: Vec<f64> },
    #[error("more than {limit} accepted steps, stopped at t = {t}")]
    TooManySteps { limit: u64, t: f64 },
    #[error("no sign change of the indicator on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Initial step, also used after every event restart.
    pub h_init: f64,
    pub h_max: f64,
    /// Width of the final bracket around a state event.
    pub event_tol: f64,
    pub record_tape: bool,
    pub max_steps: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            h_init: 1e-2,
            h_max: f64::INFINITY,
            event_tol: 1e-9,
            record_tape: false,
            max_steps: 10_000_000,
        }
    }
}

impl SolverOptions {
    pub fn with_tape(mut self) -> Self {
        self.record_tape = true;
        self
    }

    fn validate(&self) -> Result<(), SolveError> {
        let positive = |v: f64| v > 0.0 && !v.is_nan();
        if !positive(self.rel_tol) || !positive(self.abs_tol) {
            return Err(SolveError::InvalidOptions("tolerances must be positive".into()));
        }
        if !positive(self.h_init) || !positive(self.h_max) {
            return Err(SolveError::InvalidOptions("step sizes must be positive".into()));
        }
        if !positive(self.event_tol) {
            return Err(SolveError::InvalidOptions("event_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    pub n_state_events: u64,
    pub n_time_events: u64,
    pub rhs_evaluations: u64,
}

impl SolverStats {
    pub fn triggered_events(&self) -> u64 {
        self.n_state_events + self.n_time_events
    }
}

/// Saved trajectory. Event instants appear twice, pre- and post-event.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub model: String,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Discrete state valid at each saved row.
    pub discrete: Vec<Vec<f64>>,
    pub event_log: Vec<EventRecord>,
    pub stats: SolverStats,
    pub wall_time: f64,
}

impl Solution {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn column(&self, index: usize) -> Vec<f64> {
        self.states.iter().map(|row| row[index]).collect()
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// Equality of everything except the wall clock.
    pub fn same_trajectory(&self, other: &Solution) -> bool {
        self.times == other.times
            && self.states == other.states
            && self.discrete == other.discrete
            && self.event_log == other.event_log
            && self.stats == other.stats
    }

    /// Linear interpolation of channel `index` at `t`. At duplicated event
    /// rows the post-event value is used.
    pub fn interpolate(&self, index: usize, t: f64) -> f64 {
        let pos = self.times.partition_point(|&s| s <= t);
        if pos == 0 {
            return self.states[0][index];
        }
        let i = pos - 1;
        if i + 1 >= self.times.len() || self.times[i] == t {
            return self.states[i][index];
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        self.states[i][index] + w * (self.states[i + 1][index] - self.states[i][index])
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub solution: Solution,
    pub final_state: ModelState,
    pub tape: Option<Tape>,
}

thread_local! {
    static SOLVE_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `solve` calls made on the current thread.
pub fn solve_invocations() -> u64 {
    SOLVE_CALLS.with(Cell::get)
}

/// Dense output of one accepted step.
#[derive(Debug, Clone)]
pub struct StepSegment<'a> {
    pub t0: f64,
    pub h: f64,
    pub x0: &'a [f64],
    pub k: &'a [Vec<f64>],
}

impl StepSegment<'_> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn fraction(&self, t: f64) -> f64 {
        ((t - self.t0) / self.h).clamp(0.0, 1.0)
    }

    pub fn state_at(&self, t: f64) -> Vec<f64> {
        dopri::combine(self.x0, self.h, &dense_weights(self.fraction(t)), self.k)
    }
}

/// Bisection for the switch of a boolean sign function on `[lo, hi]`.
/// Returns the right end of the final bracket, whose width is at most `tol`.
pub fn locate_crossing<F: FnMut(f64) -> bool>(
    lo: f64,
    hi: f64,
    mut positive: F,
    tol: f64,
) -> Result<f64, SolveError> {
    let start = positive(lo);
    if positive(hi) == start {
        return Err(SolveError::NoSignChange { lo, hi });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if positive(mid) == start {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(b)
}

/// Locates the crossing of indicator `index` inside an accepted step using
/// the continuous extension.
pub fn locate_state_event<M: HybridModel + ?Sized>(
    model: &M,
    segment: &StepSegment<'_>,
    xd: &[f64],
    index: usize,
    tol: f64,
) -> Result<f64, SolveError> {
    let mut z = vec![0.0; model.n_indicators()];
    locate_crossing(
        segment.t0,
        segment.t1(),
        |t| {
            let x = segment.state_at(t);
            model.event_indicators(t, &x, xd, &mut z);
            z[index] > 0.0
        },
        tol,
    )
}

// PI controller constants
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;

struct Recorder {
    solution: Solution,
    tape: Option<Tape>,
}

impl Recorder {
    fn push_row(&mut self, t: f64, x: &[f64], xd: &[f64]) {
        self.solution.times.push(t);
        self.solution.states.push(x.to_vec());
        self.solution.discrete.push(xd.to_vec());
    }
}

fn indicator_signs<M: HybridModel + ?Sized>(
    model: &M,
    t: f64,
    x: &[f64],
    xd: &[f64],
    z: &mut [f64],
) -> Result<Vec<bool>, SolveError> {
    model.event_indicators(t, x, xd, z);
    if let Some(index) = z.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteIndicator { t, index }.into());
    }
    Ok(z.iter().map(|&v| v > 0.0).collect())
}

fn rhs<M: HybridModel + ?Sized>(
    model: &M,
    t: f64,
    x: &[f64],
    xd: &[f64],
) -> Result<Vec<f64>, SolveError> {
    let mut dx = vec![0.0; x.len()];
    model.derivative(t, x, xd, &mut dx);
    if let Some(index) = dx.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteDerivative { t, index }.into());
    }
    Ok(dx)
}

/// Integrates `model` from `start` to `t_end`.
///
/// Time events are hit exactly by clipping the step; an event scheduled at
/// `t_end` is processed. State events are located by bisection on the dense
/// output and the step is truncated there. After every event integration
/// restarts with `h_init`. When a time event and a state event coincide the
/// time event is handled first.
pub fn solve<M: HybridModel + ?Sized>(
    model: &M,
    start: &ModelState,
    t_end: f64,
    opts: &SolverOptions,
) -> Result<SolveResult, SolveError> {
    SOLVE_CALLS.with(|c| c.set(c.get() + 1));
    let clock = Instant::now();
    opts.validate()?;
    if !(t_end > start.t) || !t_end.is_finite() {
        return Err(SolveError::InvalidInterval {
            t0: start.t,
            t_end,
        });
    }
    let n = model.n_states();
    if start.x_c.len() != n || start.x_d.len() != model.n_discrete() {
        return Err(ModelError::Dimension {
            what: "initial state",
            expected: n,
            got: start.x_c.len(),
        }
        .into());
    }
    start.check_finite()?;

    let mut t = start.t;
    let mut x = start.x_c.clone();
    let mut xd = start.x_d.clone();
    let mut z = vec![0.0; model.n_indicators()];
    let mut signs = indicator_signs(model, t, &x, &xd, &mut z)?;
    let mut stats = SolverStats::default();
    let mut k1 = rhs(model, t, &x, &xd)?;
    stats.rhs_evaluations += 1;

    let mut rec = Recorder {
        solution: Solution {
            model: model.name().to_string(),
            times: Vec::new(),
            states: Vec::new(),
            discrete: Vec::new(),
            event_log: Vec::new(),
            stats: SolverStats::default(),
            wall_time: 0.0,
        },
        tape: opts.record_tape.then(|| Tape::new(start.clone())),
    };
    rec.push_row(t, &x, &xd);

    let h_cap = opts.h_max.min(t_end - start.t);
    let mut h = opts.h_init.min(h_cap);
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;
    let mut next_time_event = model.next_time_event(t);

    while t < t_end {
        let target = match next_time_event {
            Some(te) if te <= t_end => te,
            _ => t_end,
        };
        let remaining = target - t;
        let h_min = 16.0 * f64::EPSILON * t.abs().max(1.0);
        // a step that would land on the target, or leave a sliver before it,
        // is clipped so the target is reached exactly once
        let clipped = h >= remaining || t + h >= target || remaining - h < h_min;
        let h_step = if clipped { remaining } else { h };
        if h_step < h_min && !clipped {
            return Err(SolveError::StepSizeUnderflow { t, h: h_step, state: x });
        }

        let t_new = if clipped { target } else { t + h_step };
        let trial = dopri::trial_step(model, t, t_new, &x, &xd, h_step, &k1);
        stats.rhs_evaluations += (STAGES - 1) as u64;
        let err = if trial.finite {
            dopri::error_norm(&x, &trial.x_new, &trial.k, h_step, opts.rel_tol, opts.abs_tol)
        } else {
            f64::INFINITY
        };

        if err > 1.0 {
            stats.rejected_steps += 1;
            let shrink = if err.is_finite() {
                (err.powf(EXPO1) / SAFETY).min(1.0 / FAC_MIN)
            } else {
                1.0 / FAC_MIN
            };
            h = h_step / shrink;
            last_rejected = true;
            if h < h_min {
                return Err(SolveError::StepSizeUnderflow { t, h, state: x });
            }
            continue;
        }

        // step accepted
        stats.accepted_steps += 1;
        if stats.accepted_steps > opts.max_steps {
            return Err(SolveError::TooManySteps {
                limit: opts.max_steps,
                t,
            });
        }

        // proposal for the next step
        let fac11 = err.powf(EXPO1);
        let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
        let mut h_next = h_step / fac;
        fac_old = err.max(1e-4);
        if last_rejected {
            h_next = h_next.min(h_step);
        }
        last_rejected = false;
        // a clipped step says nothing about the natural step length
        if clipped {
            h_next = h_next.max(h);
        }

        // state events inside the step
        let new_signs = indicator_signs(model, t_new, &trial.x_new, &xd, &mut z)?;
        let mut first: Option<(f64, usize)> = None;
        for i in 0..signs.len() {
            if !model.crossing_direction(i).fires(signs[i], new_signs[i]) {
                continue;
            }
            let segment = StepSegment {
                t0: t,
                h: h_step,
                x0: &x,
                k: &trial.k,
            };
            let mut t_star = locate_state_event(model, &segment, &xd, i, opts.event_tol)?;
            if t_star >= segment.t1() {
                t_star = t_new;
            }
            match first {
                Some((tf, _)) if tf <= t_star => {}
                _ => first = Some((t_star, i)),
            }
        }

        match first {
            Some((t_star, index)) if t_star < t_new => {
                let sigma = (t_star - t) / h_step;
                let x_star = dopri::combine(&x, h_step, &dense_weights(sigma), &trial.k);
                if let Some(tape) = rec.tape.as_mut() {
                    tape.push_step(t, t_star, h_step, Some(sigma), &x, &xd, &trial);
                }
                rec.push_row(t_star, &x_star, &xd);
                t = t_star;
                x = x_star;
                apply_event(model, &mut rec, &mut stats, t, &mut x, &mut xd, EventKind::State(index))?;
            }
            state_hit => {
                if let Some(tape) = rec.tape.as_mut() {
                    tape.push_step(t, t_new, h_step, None, &x, &xd, &trial);
                }
                rec.push_row(t_new, &trial.x_new, &xd);
                t = t_new;
                x = trial.x_new;
                let time_hit = clipped && Some(target) == next_time_event;
                if time_hit {
                    apply_event(model, &mut rec, &mut stats, t, &mut x, &mut xd, EventKind::Time)?;
                }
                if let Some((_, index)) = state_hit {
                    apply_event(model, &mut rec, &mut stats, t, &mut x, &mut xd, EventKind::State(index))?;
                }
                if !time_hit && state_hit.is_none() {
                    k1 = trial.k[STAGES - 1].clone();
                    signs = new_signs;
                    h = h_next.min(h_cap);
                    continue;
                }
            }
        }

        // restart after an event
        if t >= t_end {
            break;
        }
        next_time_event = model.next_time_event(t);
        signs = indicator_signs(model, t, &x, &xd, &mut z)?;
        k1 = rhs(model, t, &x, &xd)?;
        stats.rhs_evaluations += 1;
        h = opts.h_init.min(h_cap);
        fac_old = 1e-4;
    }

    rec.solution.stats = stats;
    rec.solution.wall_time = clock.elapsed().as_secs_f64();
    debug!(
        "{}: {} steps ({} rejected), {} time / {} state events",
        model.name(),
        stats.accepted_steps,
        stats.rejected_steps,
        stats.n_time_events,
        stats.n_state_events
    );
    Ok(SolveResult {
        solution: rec.solution,
        final_state: ModelState::new(t, x, xd),
        tape: rec.tape,
    })
}

#[allow(clippy::too_many_arguments)]
fn apply_event<M: HybridModel + ?Sized>(
    model: &M,
    rec: &mut Recorder,
    stats: &mut SolverStats,
    t: f64,
    x: &mut [f64],
    xd: &mut [f64],
    kind: EventKind,
) -> Result<(), SolveError> {
    let pre_x = x.to_vec();
    let pre_xd = xd.to_vec();
    model.handle_event(t, x, xd, kind)?;
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteState { index }.into());
    }
    match kind {
        EventKind::Time => stats.n_time_events += 1,
        EventKind::State(_) => stats.n_state_events += 1,
    }
    rec.solution.event_log.push(EventRecord { t, kind });
    if let Some(tape) = rec.tape.as_mut() {
        tape.push_event(t, kind, pre_x, pre_xd, x.to_vec(), xd.to_vec());
    }
    rec.push_row(t, x, xd);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid_ode::{BouncingBall, DampedOscillator, DriveCycle, Vldm};
    use std::sync::Arc;

    /// x' = -x, no events.
    #[derive(Clone)]
    struct Decay;

    impl HybridModel for Decay {
        fn name(&self) -> &str {
            "decay"
        }
        fn n_states(&self) -> usize {
            1
        }
        fn n_discrete(&self) -> usize {
            0
        }
        fn n_indicators(&self) -> usize {
            0
        }
        fn initial_state(&self, t0: f64) -> ModelState {
            ModelState::new(t0, vec![1.0], vec![])
        }
        fn consistent_discrete(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
            vec![]
        }
        fn derivative(&self, _t: f64, x: &[f64], _xd: &[f64], dx: &mut [f64]) {
            dx[0] = -x[0];
        }
        fn event_indicators(&self, _t: f64, _x: &[f64], _xd: &[f64], _z: &mut [f64]) {}
        fn next_time_event(&self, _t: f64) -> Option<f64> {
            None
        }
        fn handle_event(
            &self,
            _t: f64,
            _x: &mut [f64],
            _xd: &mut [f64],
            _kind: EventKind,
        ) -> Result<(), ModelError> {
            Ok(())
        }
        fn derivative_vjp(
            &self,
            _t: f64,
            _x: &[f64],
            _xd: &[f64],
            adj_dx: &[f64],
            adj_x: &mut [f64],
            _adj_xd: &mut [f64],
            _adj_p: &mut [f64],
        ) {
            adj_x[0] -= adj_dx[0];
        }
        fn event_vjp(
            &self,
            _t: f64,
            _x: &[f64],
            _xd: &[f64],
            _kind: EventKind,
            _adj_x: &mut [f64],
            _adj_xd: &mut [f64],
        ) {
        }
        fn box_clone(&self) -> Box<dyn HybridModel> {
            Box::new(self.clone())
        }
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let opts = SolverOptions::default();
        let res = solve(&Decay, &Decay.initial_state(0.0), 1.0, &opts).unwrap();
        let x1 = res.final_state.x_c[0];
        assert_eq!(res.final_state.t, 1.0);
        assert!((x1 - (-1.0f64).exp()).abs() < 10.0 * opts.rel_tol);
    }

    #[test]
    fn tighter_tolerances_do_not_hurt() {
        let mut last = f64::INFINITY;
        for k in 0..6 {
            let scale = 0.5f64.powi(k);
            let opts = SolverOptions {
                rel_tol: 1e-5 * scale,
                abs_tol: 1e-7 * scale,
                ..SolverOptions::default()
            };
            let res = solve(&Decay, &Decay.initial_state(0.0), 1.0, &opts).unwrap();
            let err = (res.final_state.x_c[0] - (-1.0f64).exp()).abs();
            assert!(err <= last * 1.0000001, "k = {k}: {err} > {last}");
            last = err;
        }
    }

    #[test]
    fn linear_crossing_is_bracketed() {
        let t = locate_crossing(0.0, 1.0, |t| t - 0.5 > 0.0, 1e-9).unwrap();
        assert!((t - 0.5).abs() <= 1e-9);
        assert!(t >= 0.5);
    }

    #[test]
    fn touching_root_is_not_an_event() {
        let res = locate_crossing(0.0, 1.0, |t| (t - 0.5).powi(2) > 0.0, 1e-9);
        assert!(matches!(res, Err(SolveError::NoSignChange { .. })));
    }

    #[test]
    fn first_bounce_in_closed_form() {
        let ball = BouncingBall::default();
        let res = solve(&ball, &ball.initial_state(0.0), 1.0, &SolverOptions::default()).unwrap();
        let sol = &res.solution;
        let first = sol.event_log[0];
        assert_eq!(first.kind, EventKind::State(0));
        assert!((first.t - (2.0f64 / 9.81).sqrt()).abs() < 1e-6);
        // pre- and post-event rows at the same instant
        let i = sol.times.iter().position(|&t| t == first.t).unwrap();
        assert_eq!(sol.times[i + 1], first.t);
        assert!(sol.states[i][1] < 0.0 && sol.states[i + 1][1] > 0.0);
    }

    #[test]
    fn oscillator_tracks_exact_solution() {
        let osc = DampedOscillator::default();
        let res = solve(&osc, &osc.initial_state(0.0), 10.0, &SolverOptions::default()).unwrap();
        for (t, x) in res.solution.times.iter().zip(&res.solution.states) {
            let e = osc.exact(*t);
            assert!((x[0] - e[0]).abs() < 1e-5 && (x[1] - e[1]).abs() < 1e-5);
        }
    }

    #[test]
    fn vldm_samples_at_100hz() {
        let cycle = Arc::new(DriveCycle::new(vec![0.0, 5.0, 10.0], vec![0.0, 10.0, 10.0]).unwrap());
        let model = Vldm::baseline(cycle);
        let res = solve(&model, &model.initial_state(0.0), 10.0, &SolverOptions::default()).unwrap();
        let stats = res.solution.stats;
        assert_eq!(stats.n_time_events, 1000);
        for ev in &res.solution.event_log {
            if ev.kind == EventKind::Time {
                let k = (ev.t * 100.0).round();
                assert_eq!(ev.t, k / 100.0);
            }
        }
        let times: Vec<f64> = res.solution.event_log.iter().map(|e| e.t).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn identical_inputs_give_identical_solutions() {
        let ball = BouncingBall::default();
        let opts = SolverOptions::default().with_tape();
        let a = solve(&ball, &ball.initial_state(0.0), 3.0, &opts).unwrap();
        let b = solve(&ball, &ball.initial_state(0.0), 3.0, &opts).unwrap();
        assert!(a.solution.same_trajectory(&b.solution));
    }

    #[test]
    fn tape_replays_bitwise() {
        let cycle = Arc::new(DriveCycle::new(vec![0.0, 3.0, 6.0], vec![0.0, 8.0, 0.0]).unwrap());
        let model = Vldm::ground_truth(cycle);
        let opts = SolverOptions::default().with_tape();
        let res = solve(&model, &model.initial_state(0.0), 6.0, &opts).unwrap();
        let tape = res.tape.unwrap();
        assert_eq!(tape.len() + 1, res.solution.len());
        let rows = tape.replay(&model).unwrap();
        assert_eq!(rows.len(), res.solution.states.len());
        if let Some(i) = (0..rows.len()).find(|&i| rows[i] != res.solution.states[i]) {
            panic!(
                "row {i} at t = {}: {:?} vs {:?}, entry {:?}",
                res.solution.times[i],
                rows[i],
                res.solution.states[i],
                tape.entries[i - 1]
            );
        }

        let ball = BouncingBall::default();
        let res = solve(&ball, &ball.initial_state(0.0), 2.0, &opts).unwrap();
        let rows = res.tape.unwrap().replay(&ball).unwrap();
        assert_eq!(rows, res.solution.states);
    }

    #[test]
    fn rejects_bad_interval() {
        let r = solve(&Decay, &Decay.initial_state(1.0), 1.0, &SolverOptions::default());
        assert!(matches!(r, Err(SolveError::InvalidInterval { .. })));
    }

    #[test]
    fn counts_invocations() {
        let before = solve_invocations();
        let _ = solve(&Decay, &Decay.initial_state(0.0), 0.1, &SolverOptions::default());
        assert_eq!(solve_invocations(), before + 1);
    }
}
