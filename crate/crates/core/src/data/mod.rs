//! Drive cycles, consumption measurements, synthetic data and evaluation
//! metrics.

mod config;
mod table;

pub use config::{ConfigError, PretrainMode, RunConfig};

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::hybrid_ode::{DriveCycle, HybridModel, ModelError};
use crate::solver::{self, SolveError, Solution, SolutionFile, SolverOptions};
use table::read_table;

/// Index of the cumulative consumption state.
pub const CONSUMPTION: usize = 5;

/// Sampling rate of synthetic measurements.
pub const SYNTHETIC_RATE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: usize, msg: String },
    #[error("measurement set needs at least one run")]
    NoRuns,
    #[error("run {run} has {got} values for {expected} times")]
    RunLength { run: usize, expected: usize, got: usize },
    #[error("no data timestamp inside the solution span [{start}, {end}]")]
    NoOverlap { start: f64, end: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a `t,v_target` cycle file.
pub fn load_cycle(path: &Path) -> Result<DriveCycle, DataError> {
    let table = read_table(path)?;
    if table.header.len() != 2 || table.header[1] != "v_target" {
        return Err(DataError::Format {
            path: path.display().to_string(),
            line: 1,
            msg: format!("expected header `t,v_target`, found `{}`", table.header.join(",")),
        });
    }
    let times = table.rows.iter().map(|r| r[0]).collect();
    let speeds = table.rows.iter().map(|r| r[1]).collect();
    Ok(DriveCycle::new(times, speeds)?)
}

pub fn write_cycle(path: &Path, cycle: &DriveCycle) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_error(path))?);
    let mut text = String::from("t,v_target\n");
    for (t, v) in cycle.times().iter().zip(cycle.speeds()) {
        text.push_str(&format!("{t},{v}\n"));
    }
    w.write_all(text.as_bytes()).map_err(io_error(path))?;
    w.flush().map_err(io_error(path))
}

/// Linear interpolation on a non-decreasing grid; at repeated timestamps
/// the last value wins. Exact on grid points.
fn resample(times: &[f64], values: &[f64], t: f64) -> f64 {
    let pos = times.partition_point(|&s| s <= t);
    if pos == 0 {
        return values[0];
    }
    let i = pos - 1;
    if i + 1 >= times.len() || times[i] == t {
        return values[i];
    }
    let w = (t - times[i]) / (times[i + 1] - times[i]);
    values[i] + w * (values[i + 1] - values[i])
}

/// Repeated measurements of cumulative consumption on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub times: Vec<f64>,
    /// One vector per run.
    pub runs: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Population standard deviation across runs.
    pub std: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(times: Vec<f64>, runs: Vec<Vec<f64>>) -> Result<Self, DataError> {
        if runs.is_empty() {
            return Err(DataError::NoRuns);
        }
        for (run, r) in runs.iter().enumerate() {
            if r.len() != times.len() {
                return Err(DataError::RunLength {
                    run,
                    expected: times.len(),
                    got: r.len(),
                });
            }
        }
        let k = runs.len() as f64;
        let mut mean = vec![0.0; times.len()];
        let mut std = vec![0.0; times.len()];
        for i in 0..times.len() {
            // sorted summation keeps the result independent of run order
            let mut col: Vec<f64> = runs.iter().map(|r| r[i]).collect();
            col.sort_by(f64::total_cmp);
            let m = col.iter().sum::<f64>() / k;
            let mut dev: Vec<f64> = col.iter().map(|v| (v - m) * (v - m)).collect();
            dev.sort_by(f64::total_cmp);
            mean[i] = m;
            std[i] = (dev.iter().sum::<f64>() / k).sqrt();
        }
        Ok(Self { times, runs, mean, std })
    }

    /// Runs on individual grids, resampled linearly onto the first run's grid.
    pub fn from_runs(runs: &[(Vec<f64>, Vec<f64>)]) -> Result<Self, DataError> {
        let Some((grid, _)) = runs.first() else {
            return Err(DataError::NoRuns);
        };
        let mut values = Vec::with_capacity(runs.len());
        for (run, (t, v)) in runs.iter().enumerate() {
            if t.len() != v.len() || t.is_empty() {
                return Err(DataError::RunLength {
                    run,
                    expected: t.len(),
                    got: v.len(),
                });
            }
            values.push(grid.iter().map(|&s| resample(t, v, s)).collect());
        }
        Self::new(grid.clone(), values)
    }

    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        resample(&self.times, &self.mean, t)
    }
}

/// Reads a `t,run1,run2,...` measurement file.
pub fn load_measurements(path: &Path) -> Result<MeasurementSet, DataError> {
    let table = read_table(path)?;
    let times: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
    let runs = (1..table.header.len())
        .map(|c| table.rows.iter().map(|r| r[c]).collect())
        .collect();
    MeasurementSet::new(times, runs)
}

pub fn write_measurements(path: &Path, data: &MeasurementSet) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_error(path))?);
    let mut text = String::from("t");
    for k in 1..=data.n_runs() {
        text.push_str(&format!(",run{k}"));
    }
    text.push('\n');
    for (i, t) in data.times.iter().enumerate() {
        text.push_str(&format!("{t:.16e}"));
        for run in &data.runs {
            text.push_str(&format!(",{:.16e}", run[i]));
        }
        text.push('\n');
    }
    w.write_all(text.as_bytes()).map_err(io_error(path))?;
    w.flush().map_err(io_error(path))
}

/// Simulates `truth` over `[0, t_end]`, samples the consumption at
/// [`SYNTHETIC_RATE`] and adds independent Gaussian noise per run. Run `k`
/// draws from a generator seeded with `seed + k`. Without `noise_std` the
/// noise level is 0.3 % of the final consumption.
pub fn synthesize_measurements<M: HybridModel + ?Sized>(
    truth: &M,
    t_end: f64,
    n_runs: usize,
    noise_std: Option<f64>,
    seed: u64,
    opts: &SolverOptions,
) -> Result<MeasurementSet, DataError> {
    if n_runs == 0 {
        return Err(DataError::NoRuns);
    }
    let sol = solver::solve(truth, &truth.initial_state(0.0), t_end, opts)?.solution;
    let n = (t_end * SYNTHETIC_RATE + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 / SYNTHETIC_RATE).collect();
    let clean: Vec<f64> = times.iter().map(|&t| sol.interpolate(CONSUMPTION, t)).collect();
    let sigma = noise_std.unwrap_or_else(|| 0.003 * clean.last().unwrap().abs());
    let runs = (0..n_runs)
        .map(|k| {
            if sigma == 0.0 {
                return clean.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let noise = Normal::new(0.0, sigma).expect("noise level is finite and positive");
            clean.iter().map(|v| v + noise.sample(&mut rng)).collect()
        })
        .collect();
    MeasurementSet::new(times, runs)
}

/// Error metrics of a simulated consumption trace against the data mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub mse: f64,
    pub max_error: f64,
    /// Prediction minus data mean at the last compared timestamp.
    pub final_error: f64,
    pub sim_time: f64,
    pub solver_steps: u64,
    pub triggered_events: u64,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mse={:e}", self.mse)?;
        writeln!(f, "max_error={:e}", self.max_error)?;
        writeln!(f, "final_error={:e}", self.final_error)?;
        writeln!(f, "sim_time={:e}", self.sim_time)?;
        writeln!(f, "solver_steps={}", self.solver_steps)?;
        write!(f, "triggered_events={}", self.triggered_events)
    }
}

/// Compares channel `CONSUMPTION` of `sol` with the data mean at every data
/// timestamp inside the solution span.
pub fn evaluate(sol: &SolutionFile, data: &MeasurementSet) -> Result<EvalReport, DataError> {
    let (start, end) = match (sol.times.first(), sol.times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(DataError::NoOverlap { start: f64::NAN, end: f64::NAN }),
    };
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut max_error = 0.0f64;
    let mut final_error = 0.0;
    for (&t, &m) in data.times.iter().zip(&data.mean) {
        if t < start || t > end {
            continue;
        }
        let d = sol.interpolate(CONSUMPTION, t) - m;
        sum += d * d;
        max_error = max_error.max(d.abs());
        final_error = d;
        n += 1;
    }
    if n == 0 {
        return Err(DataError::NoOverlap { start, end });
    }
    Ok(EvalReport {
        mse: sum / n as f64,
        max_error,
        final_error,
        sim_time: sol.sim_time,
        solver_steps: sol.stats.accepted_steps,
        triggered_events: sol.stats.triggered_events(),
    })
}

pub fn evaluate_solution(sol: &Solution, data: &MeasurementSet) -> Result<EvalReport, DataError> {
    evaluate(&SolutionFile::from(sol), data)
}

/// Prediction, data mean and the mean ± 2 std band at the data timestamps.
pub fn write_comparison_csv(path: &Path, sol: &SolutionFile, data: &MeasurementSet) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_error(path))?);
    let mut text = String::from("t,prediction,data_mean,data_lower,data_upper\n");
    let (start, end) = (sol.times[0], sol.times[sol.times.len() - 1]);
    for i in 0..data.times.len() {
        let t = data.times[i];
        if t < start || t > end {
            continue;
        }
        let (m, s) = (data.mean[i], data.std[i]);
        text.push_str(&format!(
            "{t:.16e},{:.16e},{m:.16e},{:.16e},{:.16e}\n",
            sol.interpolate(CONSUMPTION, t),
            m - 2.0 * s,
            m + 2.0 * s
        ));
    }
    w.write_all(text.as_bytes()).map_err(io_error(path))?;
    w.flush().map_err(io_error(path))
}
