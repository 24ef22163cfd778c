use super::{EventKind, HybridModel, ModelError, ModelState};

/// Linear damped oscillator `x'' = -w^2 x - 2 zeta w x'` without events.
#[derive(Debug, Clone, PartialEq)]
pub struct DampedOscillator {
    pub omega: f64,
    pub zeta: f64,
    pub x0: f64,
    pub v0: f64,
    name: String,
}

impl Default for DampedOscillator {
    fn default() -> Self {
        Self::new(1.0, 0.1, 1.0, 0.0)
    }
}

impl DampedOscillator {
    pub fn new(omega: f64, zeta: f64, x0: f64, v0: f64) -> Self {
        Self {
            omega,
            zeta,
            x0,
            v0,
            name: "damped-oscillator".into(),
        }
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    /// Analytic `(x, v)` at time `t` (measured from the initial state), valid
    /// for the underdamped case.
    pub fn exact(&self, t: f64) -> [f64; 2] {
        let (w, z) = (self.omega, self.zeta);
        assert!(z < 1.0, "exact solution implemented for zeta < 1");
        let wd = w * (1.0 - z * z).sqrt();
        let a = self.x0;
        let b = (self.v0 + z * w * self.x0) / wd;
        let decay = (-z * w * t).exp();
        let (s, c) = (wd * t).sin_cos();
        let x = decay * (a * c + b * s);
        let v = decay * ((-z * w) * (a * c + b * s) + (-a * wd * s + b * wd * c));
        [x, v]
    }

    pub fn exact_derivative(&self, t: f64) -> [f64; 2] {
        let [x, v] = self.exact(t);
        [v, -self.omega * self.omega * x - 2.0 * self.zeta * self.omega * v]
    }
}

impl HybridModel for DampedOscillator {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_states(&self) -> usize {
        2
    }

    fn n_discrete(&self) -> usize {
        0
    }

    fn n_indicators(&self) -> usize {
        0
    }

    fn initial_state(&self, t0: f64) -> ModelState {
        ModelState::new(t0, vec![self.x0, self.v0], Vec::new())
    }

    fn consistent_discrete(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    fn derivative(&self, _t: f64, x: &[f64], _xd: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -self.omega * self.omega * x[0] - 2.0 * self.zeta * self.omega * x[1];
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
        kind: EventKind,
    ) -> Result<(), ModelError> {
        match kind {
            EventKind::State(index) => Err(ModelError::UnknownIndicator { index, count: 0 }),
            EventKind::Time => Err(ModelError::NoTimeEvents {
                model: self.name.clone(),
            }),
        }
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
        let w2 = self.omega * self.omega;
        let d = 2.0 * self.zeta * self.omega;
        adj_x[0] += -w2 * adj_dx[1];
        adj_x[1] += adj_dx[0] - d * adj_dx[1];
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
