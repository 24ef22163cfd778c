//! Record of accepted steps and event transfers for reverse sweeps.

use super::dopri::{self, TrialStep, STAGES};
use super::SolveError;
use crate::hybrid_ode::{EventKind, HybridModel, ModelError, ModelState};

#[derive(Debug, Clone, PartialEq)]
pub enum TapeEntry {
    /// One accepted step. `sigma` is set when the step was cut short at a
    /// state event and the end point comes from the continuous extension.
    Step {
        t0: f64,
        t1: f64,
        h: f64,
        sigma: Option<f64>,
        x0: Vec<f64>,
        xd: Vec<f64>,
        stage_times: [f64; STAGES],
        stage_states: Vec<Vec<f64>>,
        stage_derivs: Vec<Vec<f64>>,
    },
    Event {
        t: f64,
        kind: EventKind,
        pre_x: Vec<f64>,
        pre_xd: Vec<f64>,
        post_x: Vec<f64>,
        post_xd: Vec<f64>,
    },
}

impl TapeEntry {
    /// Stage weights that produce the entry's end point.
    pub fn step_weights(sigma: Option<f64>) -> [f64; STAGES] {
        match sigma {
            Some(s) => dopri::dense_weights(s),
            None => dopri::B,
        }
    }

    pub fn end_time(&self) -> f64 {
        match self {
            TapeEntry::Step { t1, .. } => *t1,
            TapeEntry::Event { t, .. } => *t,
        }
    }
}

/// Entry `i` produces saved row `i + 1`; row 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    pub start: ModelState,
    pub entries: Vec<TapeEntry>,
}

impl Tape {
    pub fn new(start: ModelState) -> Self {
        Self {
            start,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn push_step(
        &mut self,
        t0: f64,
        t1: f64,
        h: f64,
        sigma: Option<f64>,
        x0: &[f64],
        xd: &[f64],
        trial: &TrialStep,
    ) {
        self.entries.push(TapeEntry::Step {
            t0,
            t1,
            h,
            sigma,
            x0: x0.to_vec(),
            xd: xd.to_vec(),
            stage_times: trial.stage_times,
            stage_states: trial.stage_states.clone(),
            stage_derivs: trial.k.clone(),
        });
    }

    pub(crate) fn push_event(
        &mut self,
        t: f64,
        kind: EventKind,
        pre_x: Vec<f64>,
        pre_xd: Vec<f64>,
        post_x: Vec<f64>,
        post_xd: Vec<f64>,
    ) {
        self.entries.push(TapeEntry::Event {
            t,
            kind,
            pre_x,
            pre_xd,
            post_x,
            post_xd,
        });
    }

    /// Re-executes the recorded steps and event transfers from the start
    /// state and returns every saved row.
    pub fn replay<M: HybridModel + ?Sized>(&self, model: &M) -> Result<Vec<Vec<f64>>, SolveError> {
        let mut x = self.start.x_c.clone();
        let mut xd = self.start.x_d.clone();
        let mut rows = vec![x.clone()];
        for entry in &self.entries {
            match entry {
                TapeEntry::Step {
                    t0,
                    h,
                    sigma,
                    stage_times,
                    ..
                } => {
                    let mut k1 = vec![0.0; x.len()];
                    model.derivative(*t0, &x, &xd, &mut k1);
                    let t_last = stage_times[STAGES - 1];
                    let trial = dopri::trial_step(model, *t0, t_last, &x, &xd, *h, &k1);
                    x = match sigma {
                        Some(s) => dopri::combine(&x, *h, &dopri::dense_weights(*s), &trial.k),
                        None => trial.x_new,
                    };
                }
                TapeEntry::Event { t, kind, .. } => {
                    model.handle_event(*t, &mut x, &mut xd, *kind)?;
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteState { index: rows.len() }.into());
            }
            rows.push(x.clone());
        }
        Ok(rows)
    }
}
