//! Adam with an exponentially decaying step size.

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub initial: f64,
    pub multiplier: f64,
    pub floor: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            multiplier: 0.95,
            floor: 1e-5,
        }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.initial > 0.0
            && self.floor > 0.0
            && self.floor <= self.initial
            && self.multiplier > 0.0
            && self.multiplier <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(format!(
                "step schedule {self:?} needs 0 < floor <= initial and 0 < multiplier <= 1"
            )))
        }
    }

    /// Step size of optimizer step `k`, counting from zero.
    pub fn step_size(&self, k: u64) -> f64 {
        let k = i32::try_from(k).unwrap_or(i32::MAX);
        (self.initial * self.multiplier.powi(k)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update with step size `lr`. Entries with `frozen[i]` keep their
    /// value and moments.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, frozen: Option<&[bool]>) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            if frozen.is_some_and(|f| f[i]) {
                continue;
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
