//! Solution CSV: `#` comment header with run statistics, then `t,x1..xn`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::{Solution, SolverStats};

#[derive(Debug, Error)]
pub enum SolutionIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },
}

/// Contents of a solution file as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionFile {
    pub model: String,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: SolverStats,
    pub sim_time: f64,
}

impl SolutionFile {
    pub fn interpolate(&self, index: usize, t: f64) -> f64 {
        let pos = self.times.partition_point(|&s| s <= t);
        if pos == 0 {
            return self.states[0][index];
        }
        let i = pos - 1;
        if i + 1 >= self.times.len() || self.times[i] == t {
            return self.states[i][index];
        }
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        self.states[i][index] + w * (self.states[i + 1][index] - self.states[i][index])
    }
}

impl From<&Solution> for SolutionFile {
    fn from(sol: &Solution) -> Self {
        Self {
            model: sol.model.clone(),
            times: sol.times.clone(),
            states: sol.states.clone(),
            stats: sol.stats,
            sim_time: sol.wall_time,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SolutionIoError + '_ {
    move |source| SolutionIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_solution_csv(path: &Path, sol: &Solution) -> Result<(), SolutionIoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let s = &sol.stats;
    let mut text = String::new();
    text.push_str(&format!("# model={}\n", sol.model));
    text.push_str(&format!("# solver_steps={}\n", s.accepted_steps));
    text.push_str(&format!("# rejected_steps={}\n", s.rejected_steps));
    text.push_str(&format!("# state_events={}\n", s.n_state_events));
    text.push_str(&format!("# time_events={}\n", s.n_time_events));
    text.push_str(&format!("# rhs_evaluations={}\n", s.rhs_evaluations));
    text.push_str(&format!("# sim_time={:.6e}\n", sol.wall_time));
    text.push('t');
    for i in 1..=sol.n_states() {
        text.push_str(&format!(",x{i}"));
    }
    text.push('\n');
    w.write_all(text.as_bytes()).map_err(io_err(path))?;
    for (t, row) in sol.times.iter().zip(&sol.states) {
        let mut line = format!("{t:.16e}");
        for v in row {
            line.push_str(&format!(",{v:.16e}"));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_solution_csv(path: &Path) -> Result<SolutionFile, SolutionIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let fmt = |line: usize, msg: String| SolutionIoError::Format {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut out = SolutionFile {
        model: String::new(),
        times: Vec::new(),
        states: Vec::new(),
        stats: SolverStats::default(),
        sim_time: 0.0,
    };
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let Some((key, value)) = comment.split_once('=') else {
                continue;
            };
            let value = value.trim();
            let count = || {
                value
                    .parse::<u64>()
                    .map_err(|e| fmt(lineno, format!("bad count {value:?}: {e}")))
            };
            match key.trim() {
                "model" => out.model = value.to_string(),
                "solver_steps" => out.stats.accepted_steps = count()?,
                "rejected_steps" => out.stats.rejected_steps = count()?,
                "state_events" => out.stats.n_state_events = count()?,
                "time_events" => out.stats.n_time_events = count()?,
                "rhs_evaluations" => out.stats.rhs_evaluations = count()?,
                "sim_time" => {
                    out.sim_time = value
                        .parse()
                        .map_err(|e| fmt(lineno, format!("bad sim_time {value:?}: {e}")))?
                }
                _ => {}
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => {
                if cells.first() != Some(&"t") || cells.len() < 2 {
                    return Err(fmt(lineno, "expected header `t,x1,...`".into()));
                }
                width = Some(cells.len());
            }
            Some(w) => {
                if cells.len() != w {
                    return Err(fmt(lineno, format!("expected {w} columns, found {}", cells.len())));
                }
                let values = cells
                    .iter()
                    .map(|c| c.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| fmt(lineno, format!("bad number: {e}")))?;
                if let Some(&prev) = out.times.last() {
                    if values[0] < prev {
                        return Err(fmt(lineno, "time decreases".into()));
                    }
                }
                out.times.push(values[0]);
                out.states.push(values[1..].to_vec());
            }
        }
    }
    if width.is_none() {
        return Err(fmt(0, "missing header".into()));
    }
    Ok(out)
}
