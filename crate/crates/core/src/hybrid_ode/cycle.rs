use super::ModelError;

/// Target speed profile `v_target(t)`, linearly interpolated between rows and
/// held constant outside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveCycle {
    times: Vec<f64>,
    speeds: Vec<f64>,
}

impl DriveCycle {
    pub fn new(times: Vec<f64>, speeds: Vec<f64>) -> Result<Self, ModelError> {
        if times.is_empty() {
            return Err(ModelError::InvalidCycle("no rows".into()));
        }
        if times.len() != speeds.len() {
            return Err(ModelError::InvalidCycle(format!(
                "{} times but {} speeds",
                times.len(),
                speeds.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(ModelError::InvalidCycle(format!(
                "first time must be 0, got {}",
                times[0]
            )));
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(ModelError::InvalidCycle(format!(
                    "time not strictly increasing at row {}",
                    i + 1
                )));
            }
        }
        if let Some(i) = speeds.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::InvalidCycle(format!("non-finite speed at row {i}")));
        }
        Ok(Self { times, speeds })
    }

    /// Constant-speed cycle, handy for tests.
    pub fn constant(speed: f64) -> Self {
        Self {
            times: vec![0.0],
            speeds: vec![speed],
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.speeds[0];
        }
        if t >= self.times[n - 1] {
            return self.speeds[n - 1];
        }
        // first index with times[i] > t
        let hi = self.times.partition_point(|&ti| ti <= t);
        let lo = hi - 1;
        let w = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        self.speeds[lo] + w * (self.speeds[hi] - self.speeds[lo])
    }
}
