//! Model-exchange interface for discontinuous ODE models.
//!
//! A [`HybridModel`] is stateless: it evaluates the right-hand side, the
//! event indicators and the event transfer for a state it is handed. The
//! mutable part (time, continuous state `x_c`, discrete state `x_d`) lives in
//! a [`ModelState`], owned either by a [`ModelInstance`] or by the solver while
//! it integrates. This mirrors an ME-FMU, where the instance memory is the
//! only thing that changes between calls.

mod bouncing_ball;
mod cycle;
mod oscillator;
mod vldm;

pub use bouncing_ball::BouncingBall;
pub use cycle::DriveCycle;
pub use oscillator::DampedOscillator;
pub use vldm::{discrete_index, Vldm, VldmParams};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite derivative in state {index} at t={t}")]
    NonFiniteDerivative { t: f64, index: usize },
    #[error("non-finite event indicator {index} at t={t}")]
    NonFiniteIndicator { t: f64, index: usize },
    #[error("non-finite state entry {index}")]
    NonFiniteState { index: usize },
    #[error("unknown event indicator index {index} (model declares {count})")]
    UnknownIndicator { index: usize, count: usize },
    #[error("model `{model}` has no time events")]
    NoTimeEvents { model: String },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("snapshot was taken from model `{found}`, cannot restore into `{expected}`")]
    SnapshotMismatch { expected: String, found: String },
    #[error("invalid drive cycle: {0}")]
    InvalidCycle(String),
    #[error("network evaluation failed: {0}")]
    Network(String),
}

/// Time, continuous and discrete state of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub t: f64,
    pub x_c: Vec<f64>,
    pub x_d: Vec<f64>,
}

impl ModelState {
    pub fn new(t: f64, x_c: Vec<f64>, x_d: Vec<f64>) -> Self {
        Self { t, x_c, x_d }
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        match self.x_c.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(ModelError::NonFiniteState { index }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventIndicators {
    pub z: Vec<f64>,
}

impl EventIndicators {
    pub fn n_indicators(&self) -> usize {
        self.z.len()
    }
}

/// External inputs and outputs of a model. The built-in models declare none.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelIO {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

impl ModelIO {
    pub fn check<M: HybridModel + ?Sized>(&self, model: &M) -> Result<(), ModelError> {
        if self.u.len() != model.n_inputs() {
            return Err(ModelError::Dimension {
                what: "inputs",
                expected: model.n_inputs(),
                got: self.u.len(),
            });
        }
        if self.y.len() != model.n_outputs() {
            return Err(ModelError::Dimension {
                what: "outputs",
                expected: model.n_outputs(),
                got: self.y.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Time,
    /// Zero crossing of the indicator with the given index.
    State(usize),
}

/// Which sign changes of an indicator count as a state event. The sign of an
/// indicator is `z > 0` versus `z <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingDirection {
    Falling,
    Rising,
    Either,
}

impl CrossingDirection {
    pub fn fires(self, before_positive: bool, after_positive: bool) -> bool {
        match self {
            CrossingDirection::Falling => before_positive && !after_positive,
            CrossingDirection::Rising => !before_positive && after_positive,
            CrossingDirection::Either => before_positive != after_positive,
        }
    }
}

/// A discontinuous ODE model in model-exchange form.
///
/// All vector-Jacobian methods accumulate (`+=`) into their output slices.
pub trait HybridModel: Send + Sync {
    fn name(&self) -> &str;
    fn n_states(&self) -> usize;
    fn n_discrete(&self) -> usize;
    fn n_indicators(&self) -> usize;

    fn n_inputs(&self) -> usize {
        0
    }

    fn n_outputs(&self) -> usize {
        0
    }

    fn outputs(&self, _t: f64, _x: &[f64], _xd: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    /// Initial state at `t0` with a consistent discrete state.
    fn initial_state(&self, t0: f64) -> ModelState;

    /// Discrete state the model's initialization would pick for `x` at `t`.
    fn consistent_discrete(&self, t: f64, x: &[f64]) -> Vec<f64>;

    /// Right-hand side. Reads `xd`, never writes it.
    fn derivative(&self, t: f64, x: &[f64], xd: &[f64], dx: &mut [f64]);

    fn event_indicators(&self, t: f64, x: &[f64], xd: &[f64], z: &mut [f64]);

    fn crossing_direction(&self, _index: usize) -> CrossingDirection {
        CrossingDirection::Either
    }

    /// Smallest scheduled time event strictly after `t`.
    fn next_time_event(&self, t: f64) -> Option<f64>;

    fn handle_event(
        &self,
        t: f64,
        x: &mut [f64],
        xd: &mut [f64],
        kind: EventKind,
    ) -> Result<(), ModelError>;

    /// Number of trainable parameters the right-hand side depends on.
    fn n_params(&self) -> usize {
        0
    }

    /// Pulls `adj_dx` back through `derivative` at `(t, x, xd)`.
    #[allow(clippy::too_many_arguments)]
    fn derivative_vjp(
        &self,
        t: f64,
        x: &[f64],
        xd: &[f64],
        adj_dx: &[f64],
        adj_x: &mut [f64],
        adj_xd: &mut [f64],
        adj_p: &mut [f64],
    );

    /// Maps adjoints of the post-event state to adjoints of the pre-event
    /// state in place. `x` and `xd` are the pre-event values.
    fn event_vjp(
        &self,
        t: f64,
        x: &[f64],
        xd: &[f64],
        kind: EventKind,
        adj_x: &mut [f64],
        adj_xd: &mut [f64],
    );

    fn box_clone(&self) -> Box<dyn HybridModel>;
}

impl Clone for Box<dyn HybridModel> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

impl HybridModel for Box<dyn HybridModel> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn n_states(&self) -> usize {
        (**self).n_states()
    }
    fn n_discrete(&self) -> usize {
        (**self).n_discrete()
    }
    fn n_indicators(&self) -> usize {
        (**self).n_indicators()
    }
    fn n_inputs(&self) -> usize {
        (**self).n_inputs()
    }
    fn n_outputs(&self) -> usize {
        (**self).n_outputs()
    }
    fn outputs(&self, t: f64, x: &[f64], xd: &[f64]) -> Vec<f64> {
        (**self).outputs(t, x, xd)
    }
    fn initial_state(&self, t0: f64) -> ModelState {
        (**self).initial_state(t0)
    }
    fn consistent_discrete(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (**self).consistent_discrete(t, x)
    }
    fn derivative(&self, t: f64, x: &[f64], xd: &[f64], dx: &mut [f64]) {
        (**self).derivative(t, x, xd, dx)
    }
    fn event_indicators(&self, t: f64, x: &[f64], xd: &[f64], z: &mut [f64]) {
        (**self).event_indicators(t, x, xd, z)
    }
    fn crossing_direction(&self, index: usize) -> CrossingDirection {
        (**self).crossing_direction(index)
    }
    fn next_time_event(&self, t: f64) -> Option<f64> {
        (**self).next_time_event(t)
    }
    fn handle_event(
        &self,
        t: f64,
        x: &mut [f64],
        xd: &mut [f64],
        kind: EventKind,
    ) -> Result<(), ModelError> {
        (**self).handle_event(t, x, xd, kind)
    }
    fn n_params(&self) -> usize {
        (**self).n_params()
    }
    fn derivative_vjp(
        &self,
        t: f64,
        x: &[f64],
        xd: &[f64],
        adj_dx: &[f64],
        adj_x: &mut [f64],
        adj_xd: &mut [f64],
        adj_p: &mut [f64],
    ) {
        (**self).derivative_vjp(t, x, xd, adj_dx, adj_x, adj_xd, adj_p)
    }
    fn event_vjp(
        &self,
        t: f64,
        x: &[f64],
        xd: &[f64],
        kind: EventKind,
        adj_x: &mut [f64],
        adj_xd: &mut [f64],
    ) {
        (**self).event_vjp(t, x, xd, kind, adj_x, adj_xd)
    }
    fn box_clone(&self) -> Box<dyn HybridModel> {
        (**self).box_clone()
    }
}

/// Evaluates the right-hand side and rejects non-finite entries.
pub fn derivative<M: HybridModel + ?Sized>(
    model: &M,
    state: &ModelState,
) -> Result<Vec<f64>, ModelError> {
    check_dims(model, state)?;
    let mut dx = vec![0.0; model.n_states()];
    model.derivative(state.t, &state.x_c, &state.x_d, &mut dx);
    if let Some(index) = dx.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteDerivative { t: state.t, index });
    }
    Ok(dx)
}

pub fn event_indicators<M: HybridModel + ?Sized>(
    model: &M,
    state: &ModelState,
) -> Result<EventIndicators, ModelError> {
    check_dims(model, state)?;
    let mut z = vec![0.0; model.n_indicators()];
    model.event_indicators(state.t, &state.x_c, &state.x_d, &mut z);
    if let Some(index) = z.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteIndicator { t: state.t, index });
    }
    Ok(EventIndicators { z })
}

/// Applies the event transfer to a copy of `state`.
pub fn handle_event<M: HybridModel + ?Sized>(
    model: &M,
    state: &ModelState,
    kind: EventKind,
) -> Result<ModelState, ModelError> {
    check_dims(model, state)?;
    if let EventKind::State(index) = kind {
        if index >= model.n_indicators() {
            return Err(ModelError::UnknownIndicator {
                index,
                count: model.n_indicators(),
            });
        }
    }
    let mut next = state.clone();
    model.handle_event(next.t, &mut next.x_c, &mut next.x_d, kind)?;
    Ok(next)
}

fn check_dims<M: HybridModel + ?Sized>(model: &M, state: &ModelState) -> Result<(), ModelError> {
    if state.x_c.len() != model.n_states() {
        return Err(ModelError::Dimension {
            what: "continuous state",
            expected: model.n_states(),
            got: state.x_c.len(),
        });
    }
    if state.x_d.len() != model.n_discrete() {
        return Err(ModelError::Dimension {
            what: "discrete state",
            expected: model.n_discrete(),
            got: state.x_d.len(),
        });
    }
    Ok(())
}

/// Opaque copy of an instance's full memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    model: String,
    state: ModelState,
}

impl Snapshot {
    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn model_name(&self) -> &str {
        &self.model
    }
}

/// A model together with its current state.
#[derive(Clone)]
pub struct ModelInstance<M: HybridModel> {
    model: M,
    state: ModelState,
}

impl<M: HybridModel> ModelInstance<M> {
    pub fn new(model: M, t0: f64) -> Self {
        let state = model.initial_state(t0);
        Self { model, state }
    }

    pub fn with_state(model: M, state: ModelState) -> Result<Self, ModelError> {
        check_dims(&model, &state)?;
        state.check_finite()?;
        Ok(Self { model, state })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut M {
        &mut self.model
    }

    pub fn into_model(self) -> M {
        self.model
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn set_state(&mut self, state: ModelState) -> Result<(), ModelError> {
        check_dims(&self.model, &state)?;
        state.check_finite()?;
        self.state = state;
        Ok(())
    }

    pub fn derivative(&self) -> Result<Vec<f64>, ModelError> {
        derivative(&self.model, &self.state)
    }

    pub fn event_indicators(&self) -> Result<EventIndicators, ModelError> {
        event_indicators(&self.model, &self.state)
    }

    pub fn next_time_event(&self) -> Option<f64> {
        self.model.next_time_event(self.state.t)
    }

    pub fn handle_event(&mut self, kind: EventKind) -> Result<(), ModelError> {
        self.state = handle_event(&self.model, &self.state, kind)?;
        Ok(())
    }

    pub fn save_state(&self) -> Snapshot {
        Snapshot {
            model: self.model.name().to_string(),
            state: self.state.clone(),
        }
    }

    pub fn restore_state(&mut self, snapshot: &Snapshot) -> Result<(), ModelError> {
        if snapshot.model != self.model.name() {
            return Err(ModelError::SnapshotMismatch {
                expected: self.model.name().to_string(),
                found: snapshot.model.clone(),
            });
        }
        self.state = snapshot.state.clone();
        Ok(())
    }
}

impl Snapshot {
    pub(crate) fn from_parts(model: &str, state: ModelState) -> Self {
        Self {
            model: model.to_string(),
            state,
        }
    }

    pub(crate) fn state(&self) -> &ModelState {
        &self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_direction_filters() {
        assert!(CrossingDirection::Falling.fires(true, false));
        assert!(!CrossingDirection::Falling.fires(false, true));
        assert!(CrossingDirection::Rising.fires(false, true));
        assert!(CrossingDirection::Either.fires(false, true));
        assert!(!CrossingDirection::Either.fires(true, true));
    }

    #[test]
    fn save_restore_round_trip_keeps_derivative() {
        let mut inst = ModelInstance::new(BouncingBall::default(), 0.0);
        let before = inst.derivative().unwrap();
        let snap = inst.save_state();
        inst.restore_state(&snap).unwrap();
        assert_eq!(before, inst.derivative().unwrap());
    }

    #[test]
    fn restore_rejects_foreign_snapshot() {
        let ball = ModelInstance::new(BouncingBall::default(), 0.0);
        let mut osc = ModelInstance::new(DampedOscillator::default(), 0.0);
        let err = osc.restore_state(&ball.save_state()).unwrap_err();
        assert!(matches!(err, ModelError::SnapshotMismatch { .. }));
    }

    #[test]
    fn unknown_indicator_is_an_error() {
        let inst = ModelInstance::new(BouncingBall::default(), 0.0);
        let err = handle_event(inst.model(), inst.state(), EventKind::State(3)).unwrap_err();
        assert_eq!(err, ModelError::UnknownIndicator { index: 3, count: 1 });
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ball = BouncingBall::default();
        let bad = ModelState::new(0.0, vec![1.0], vec![]);
        assert!(matches!(
            derivative(&ball, &bad),
            Err(ModelError::Dimension { .. })
        ));
    }

    #[test]
    fn model_io_lengths_checked() {
        let ball = BouncingBall::default();
        assert!(ModelIO::default().check(&ball).is_ok());
        let io = ModelIO {
            u: vec![1.0],
            y: vec![],
        };
        assert!(io.check(&ball).is_err());
    }
}
