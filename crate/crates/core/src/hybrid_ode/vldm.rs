//! Lightweight vehicle longitudinal dynamics model ("VLDM-lite").
//!
//! Continuous states (0-based):
//!
//! | index | meaning                               | unit |
//! |-------|---------------------------------------|------|
//! | 0     | throttle PI integrator                | m    |
//! | 1     | brake PI integrator                   | m    |
//! | 2     | cycle position, integral of v_target  | m    |
//! | 3     | vehicle position                      | m    |
//! | 4     | vehicle speed                         | m/s  |
//! | 5     | cumulative consumption                | Ws   |
//!
//! The driver is a pair of sampled PI controllers running at 100 Hz. Pedal
//! commands are zero-order held in the discrete state and only change at the
//! sampling time events. Throttle and brake are switched through a hysteresis
//! and their integrators are reset to zero on activation. The single state
//! event indicator is the vehicle speed; its zero crossings switch between
//! the moving and the standstill friction branch. A standing vehicle only
//! switches back once it exceeds [`Vldm::LAUNCH_SPEED`].

use std::sync::Arc;

use super::{DriveCycle, EventKind, HybridModel, ModelError, ModelState};

/// Indices into the discrete state vector.
pub mod discrete_index {
    pub const THROTTLE_CMD: usize = 0;
    pub const BRAKE_CMD: usize = 1;
    pub const THROTTLE_ACTIVE: usize = 2;
    pub const BRAKE_ACTIVE: usize = 3;
    /// 1 while moving forward, 0 at standstill.
    pub const MOVING: usize = 4;
}

use discrete_index::*;

const SPEED: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct VldmParams {
    pub mass: f64,
    pub max_traction_force: f64,
    pub max_power: f64,
    pub max_brake_force: f64,
    pub rolling_coeff: f64,
    pub air_density: f64,
    pub drag_area: f64,
    pub drivetrain_efficiency: f64,
    pub aux_power: f64,
    pub gravity: f64,
    /// Viscous friction coefficient `c_v` in N s/m. Zero for the baseline.
    pub viscous_friction: f64,
    pub kp: f64,
    pub ki: f64,
    pub activation_threshold: f64,
    pub deactivation_threshold: f64,
    /// Controller sampling rate in Hz.
    pub sample_rate: f64,
}

impl Default for VldmParams {
    fn default() -> Self {
        Self {
            mass: 1200.0,
            max_traction_force: 3000.0,
            max_power: 60_000.0,
            max_brake_force: 4000.0,
            rolling_coeff: 0.012,
            air_density: 1.204,
            drag_area: 0.6,
            drivetrain_efficiency: 0.85,
            aux_power: 300.0,
            gravity: 9.81,
            viscous_friction: 0.0,
            kp: 0.4,
            ki: 0.2,
            activation_threshold: 0.05,
            deactivation_threshold: 0.0,
            sample_rate: 100.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Vldm {
    params: VldmParams,
    cycle: Arc<DriveCycle>,
    name: String,
}

impl Vldm {
    pub const GROUND_TRUTH_VISCOUS_FRICTION: f64 = 15.0;
    /// Speed a standing vehicle must exceed before it counts as moving again.
    /// Without this margin a small positive drift at standstill would flip
    /// the branch back and forth at an unbounded rate.
    pub const LAUNCH_SPEED: f64 = 1e-3;

    pub fn new(name: &str, params: VldmParams, cycle: Arc<DriveCycle>) -> Self {
        Self {
            params,
            cycle,
            name: name.into(),
        }
    }

    /// First-principle model without the viscous friction term.
    pub fn baseline(cycle: Arc<DriveCycle>) -> Self {
        Self::new("vldm-lite-baseline", VldmParams::default(), cycle)
    }

    /// Reference plant with viscous friction `c_v = 15 N s/m`.
    pub fn ground_truth(cycle: Arc<DriveCycle>) -> Self {
        let params = VldmParams {
            viscous_friction: Self::GROUND_TRUTH_VISCOUS_FRICTION,
            ..VldmParams::default()
        };
        Self::new("vldm-lite-truth", params, cycle)
    }

    pub fn params(&self) -> &VldmParams {
        &self.params
    }

    pub fn cycle(&self) -> &Arc<DriveCycle> {
        &self.cycle
    }

    fn static_roll_force(&self) -> f64 {
        self.params.rolling_coeff * self.params.mass * self.params.gravity
    }

    /// Available traction force at speed `v` and its derivative in `v`.
    fn traction_limit(&self, v: f64) -> (f64, f64) {
        let p = &self.params;
        let v_eff = v.max(0.1);
        let power_limited = p.max_power / v_eff;
        if power_limited < p.max_traction_force {
            let slope = if v > 0.1 { -p.max_power / (v * v) } else { 0.0 };
            (power_limited, slope)
        } else {
            (p.max_traction_force, 0.0)
        }
    }

    /// Hysteresis update, integrator reset and new commands for one sample.
    /// Returns `(throttle_reset, brake_reset)`.
    fn sample_controllers(&self, t: f64, x: &mut [f64], xd: &mut [f64]) -> (bool, bool) {
        let p = &self.params;
        let err = self.cycle.speed_at(t) - x[SPEED];
        let thr_was = xd[THROTTLE_ACTIVE] > 0.5;
        let brk_was = xd[BRAKE_ACTIVE] > 0.5;
        let thr_on = if thr_was {
            err >= p.deactivation_threshold
        } else {
            err > p.activation_threshold
        };
        let brk_on = if brk_was {
            -err >= p.deactivation_threshold
        } else {
            -err > p.activation_threshold
        };
        let thr_reset = thr_on && !thr_was;
        let brk_reset = brk_on && !brk_was;
        if thr_reset {
            x[0] = 0.0;
        }
        if brk_reset {
            x[1] = 0.0;
        }
        xd[THROTTLE_ACTIVE] = if thr_on { 1.0 } else { 0.0 };
        xd[BRAKE_ACTIVE] = if brk_on { 1.0 } else { 0.0 };
        xd[THROTTLE_CMD] = if thr_on {
            (p.kp * err + p.ki * x[0]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        xd[BRAKE_CMD] = if brk_on {
            (p.kp * -err + p.ki * x[1]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (thr_reset, brk_reset)
    }

    fn sample_index_after(&self, t: f64) -> i64 {
        let rate = self.params.sample_rate;
        let mut k = (t * rate).floor() as i64 + 1;
        while (k as f64) / rate <= t {
            k += 1;
        }
        while k > 1 && ((k - 1) as f64) / rate > t {
            k -= 1;
        }
        k
    }
}

impl HybridModel for Vldm {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_states(&self) -> usize {
        6
    }

    fn n_discrete(&self) -> usize {
        5
    }

    fn n_indicators(&self) -> usize {
        1
    }

    fn initial_state(&self, t0: f64) -> ModelState {
        let mut x = vec![0.0; 6];
        x[SPEED] = self.cycle.speed_at(t0);
        let xd = self.consistent_discrete(t0, &x);
        ModelState::new(t0, x, xd)
    }

    fn consistent_discrete(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut xd = vec![0.0; 5];
        xd[MOVING] = if x[SPEED] > 0.0 { 1.0 } else { 0.0 };
        let mut xc = x.to_vec();
        self.sample_controllers(t, &mut xc, &mut xd);
        xd
    }

    fn derivative(&self, t: f64, x: &[f64], xd: &[f64], dx: &mut [f64]) {
        let p = &self.params;
        let v_target = self.cycle.speed_at(t);
        let v = x[SPEED];
        let err = v_target - v;
        dx[0] = if xd[THROTTLE_ACTIVE] > 0.5 { err } else { 0.0 };
        dx[1] = if xd[BRAKE_ACTIVE] > 0.5 { -err } else { 0.0 };
        dx[2] = v_target;
        dx[3] = v;
        let (f_avail, _) = self.traction_limit(v);
        let f_trac = xd[THROTTLE_CMD] * f_avail;
        let f_aero = 0.5 * p.air_density * p.drag_area * v * v.abs();
        let f_extra = p.viscous_friction * v;
        dx[4] = if xd[MOVING] > 0.5 {
            let f_brk = xd[BRAKE_CMD] * p.max_brake_force;
            let f_roll = self.static_roll_force();
            (f_trac - f_brk - f_roll - f_aero - f_extra) / p.mass
        } else {
            // held by brakes and rolling resistance until traction wins
            (f_trac - self.static_roll_force() - f_aero - f_extra).max(0.0) / p.mass
        };
        dx[5] = f_trac * v / p.drivetrain_efficiency + p.aux_power;
    }

    fn event_indicators(&self, _t: f64, x: &[f64], xd: &[f64], z: &mut [f64]) {
        z[0] = if xd[MOVING] > 0.5 {
            x[SPEED]
        } else {
            x[SPEED] - Self::LAUNCH_SPEED
        };
    }

    fn next_time_event(&self, t: f64) -> Option<f64> {
        Some(self.sample_index_after(t) as f64 / self.params.sample_rate)
    }

    fn handle_event(
        &self,
        t: f64,
        x: &mut [f64],
        xd: &mut [f64],
        kind: EventKind,
    ) -> Result<(), ModelError> {
        match kind {
            EventKind::Time => {
                self.sample_controllers(t, x, xd);
                Ok(())
            }
            EventKind::State(0) => {
                let threshold = if xd[MOVING] > 0.5 { 0.0 } else { Self::LAUNCH_SPEED };
                xd[MOVING] = if x[SPEED] > threshold { 1.0 } else { 0.0 };
                Ok(())
            }
            EventKind::State(index) => Err(ModelError::UnknownIndicator { index, count: 1 }),
        }
    }

    fn derivative_vjp(
        &self,
        _t: f64,
        x: &[f64],
        xd: &[f64],
        adj_dx: &[f64],
        adj_x: &mut [f64],
        adj_xd: &mut [f64],
        _adj_p: &mut [f64],
    ) {
        let p = &self.params;
        let v = x[SPEED];
        let mut a_v = 0.0;
        if xd[THROTTLE_ACTIVE] > 0.5 {
            a_v -= adj_dx[0];
        }
        if xd[BRAKE_ACTIVE] > 0.5 {
            a_v += adj_dx[1];
        }
        a_v += adj_dx[3];

        let (f_avail, d_avail) = self.traction_limit(v);
        let u_thr = xd[THROTTLE_CMD];
        let f_trac = u_thr * f_avail;
        let d_trac_dv = u_thr * d_avail;
        let d_aero_dv = p.air_density * p.drag_area * v.abs();
        let g5 = adj_dx[4] / p.mass;
        let f_aero = 0.5 * p.air_density * p.drag_area * v * v.abs();
        let net_active = if xd[MOVING] > 0.5 {
            adj_xd[BRAKE_CMD] -= g5 * p.max_brake_force;
            true
        } else {
            f_trac - self.static_roll_force() - f_aero - p.viscous_friction * v > 0.0
        };
        if net_active {
            a_v += g5 * (d_trac_dv - d_aero_dv - p.viscous_friction);
            adj_xd[THROTTLE_CMD] += g5 * f_avail;
        }

        let g6 = adj_dx[5] / p.drivetrain_efficiency;
        a_v += g6 * (d_trac_dv * v + f_trac);
        adj_xd[THROTTLE_CMD] += g6 * f_avail * v;

        adj_x[SPEED] += a_v;
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
        match kind {
            EventKind::Time => {
                let p = &self.params;
                let mut x_post = x.to_vec();
                let mut xd_post = xd.to_vec();
                let (thr_reset, brk_reset) = self.sample_controllers(t, &mut x_post, &mut xd_post);
                let err = self.cycle.speed_at(t) - x[SPEED];
                let a_thr = adj_xd[THROTTLE_CMD];
                let a_brk = adj_xd[BRAKE_CMD];

                // adjoints of the post-reset integrators
                let mut a_i0 = adj_x[0];
                let mut a_i1 = adj_x[1];
                if xd_post[THROTTLE_ACTIVE] > 0.5 {
                    let raw = p.kp * err + p.ki * x_post[0];
                    if raw > 0.0 && raw < 1.0 {
                        adj_x[SPEED] -= p.kp * a_thr;
                        a_i0 += p.ki * a_thr;
                    }
                }
                if xd_post[BRAKE_ACTIVE] > 0.5 {
                    let raw = -p.kp * err + p.ki * x_post[1];
                    if raw > 0.0 && raw < 1.0 {
                        adj_x[SPEED] += p.kp * a_brk;
                        a_i1 += p.ki * a_brk;
                    }
                }
                adj_x[0] = if thr_reset { 0.0 } else { a_i0 };
                adj_x[1] = if brk_reset { 0.0 } else { a_i1 };
                adj_xd[THROTTLE_CMD] = 0.0;
                adj_xd[BRAKE_CMD] = 0.0;
                adj_xd[THROTTLE_ACTIVE] = 0.0;
                adj_xd[BRAKE_ACTIVE] = 0.0;
            }
            EventKind::State(_) => {
                adj_xd[MOVING] = 0.0;
            }
        }
    }

    fn box_clone(&self) -> Box<dyn HybridModel> {
        Box::new(self.clone())
    }
}
