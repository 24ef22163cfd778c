use super::{CrossingDirection, EventKind, HybridModel, ModelError, ModelState};

/// Ball dropped from `h0` under gravity, bouncing with restitution `e`.
/// States are height and velocity; the height is the only event indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct BouncingBall {
    pub gravity: f64,
    pub restitution: f64,
    pub h0: f64,
}

impl Default for BouncingBall {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            restitution: 0.8,
            h0: 1.0,
        }
    }
}

impl BouncingBall {
    /// Closed-form impact times of the first `n` bounces.
    pub fn bounce_times(&self, n: usize) -> Vec<f64> {
        let t1 = (2.0 * self.h0 / self.gravity).sqrt();
        let mut times = Vec::with_capacity(n);
        let mut t = t1;
        let mut v = self.gravity * t1;
        for _ in 0..n {
            times.push(t);
            v *= self.restitution;
            t += 2.0 * v / self.gravity;
        }
        times
    }
}

impl HybridModel for BouncingBall {
    fn name(&self) -> &str {
        "bouncing-ball"
    }

    fn n_states(&self) -> usize {
        2
    }

    fn n_discrete(&self) -> usize {
        0
    }

    fn n_indicators(&self) -> usize {
        1
    }

    fn initial_state(&self, t0: f64) -> ModelState {
        ModelState::new(t0, vec![self.h0, 0.0], Vec::new())
    }

    fn consistent_discrete(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    fn derivative(&self, _t: f64, x: &[f64], _xd: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -self.gravity;
    }

    fn event_indicators(&self, _t: f64, x: &[f64], _xd: &[f64], z: &mut [f64]) {
        z[0] = x[0];
    }

    fn crossing_direction(&self, _index: usize) -> CrossingDirection {
        CrossingDirection::Falling
    }

    fn next_time_event(&self, _t: f64) -> Option<f64> {
        None
    }

    fn handle_event(
        &self,
        _t: f64,
        x: &mut [f64],
        _xd: &mut [f64],
        kind: EventKind,
    ) -> Result<(), ModelError> {
        match kind {
            EventKind::State(0) => {
                x[1] *= -self.restitution;
                Ok(())
            }
            EventKind::State(index) => Err(ModelError::UnknownIndicator { index, count: 1 }),
            EventKind::Time => Err(ModelError::NoTimeEvents {
                model: self.name().into(),
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
        adj_x[1] += adj_dx[0];
    }

    fn event_vjp(
        &self,
        _t: f64,
        _x: &[f64],
        _xd: &[f64],
        kind: EventKind,
        adj_x: &mut [f64],
        _adj_xd: &mut [f64],
    ) {
        if kind == EventKind::State(0) {
            adj_x[1] *= -self.restitution;
        }
    }

    fn box_clone(&self) -> Box<dyn HybridModel> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid_ode::{derivative, event_indicators, handle_event};

    #[test]
    fn free_fall_derivative() {
        let ball = BouncingBall::default();
        let s = ModelState::new(0.0, vec![1.0, 0.0], vec![]);
        assert_eq!(derivative(&ball, &s).unwrap(), vec![0.0, -9.81]);
    }

    #[test]
    fn indicator_is_height() {
        let ball = BouncingBall::default();
        for h in [0.5, -0.01] {
            let s = ModelState::new(0.0, vec![h, 0.0], vec![]);
            assert_eq!(event_indicators(&ball, &s).unwrap().z, vec![h]);
        }
    }

    #[test]
    fn bounce_reverses_velocity_with_restitution() {
        let ball = BouncingBall::default();
        let s = ModelState::new(0.3, vec![0.0, -3.0], vec![]);
        let post = handle_event(&ball, &s, EventKind::State(0)).unwrap();
        assert_eq!(post.x_c[0], 0.0);
        assert!((post.x_c[1] - 2.4).abs() < 1e-15);
    }

    #[test]
    fn no_time_events() {
        let ball = BouncingBall::default();
        assert_eq!(ball.next_time_event(0.0), None);
        assert_eq!(ball.next_time_event(12.3), None);
    }

    #[test]
    fn closed_form_first_bounce() {
        let t = BouncingBall::default().bounce_times(2);
        assert!((t[0] - 0.451_524).abs() < 1e-6);
        assert!((t[1] - t[0] - 1.6 * t[0]).abs() < 1e-12);
    }
}
