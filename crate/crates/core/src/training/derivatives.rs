//! Finite-difference estimates of state derivatives from samples.

use super::TrainError;

/// Three-point derivative estimates, exact for quadratics on any grid.
/// `smoothing` applies a centred moving average of that many samples
/// (truncated at the ends) to the estimates.
pub fn estimate_derivatives(
    times: &[f64],
    samples: &[Vec<f64>],
    smoothing: Option<usize>,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let n = times.len();
    if n < 3 || samples.len() != n {
        return Err(TrainError::TooFewSamples { got: n.min(samples.len()) });
    }
    for i in 1..n {
        if times[i] <= times[i - 1] {
            return Err(TrainError::NonIncreasingTime { index: i, t: times[i] });
        }
    }
    let width = samples[0].len();
    let mut out = vec![vec![0.0; width]; n];
    for (i, row) in out.iter_mut().enumerate() {
        // stencil and the point the derivative is taken at
        let (j, at) = match i {
            0 => (0, times[0]),
            _ if i == n - 1 => (n - 3, times[n - 1]),
            _ => (i - 1, times[i]),
        };
        let (t0, t1, t2) = (times[j], times[j + 1], times[j + 2]);
        // derivative of the Lagrange basis at `at`
        let l0 = ((at - t1) + (at - t2)) / ((t0 - t1) * (t0 - t2));
        let l1 = ((at - t0) + (at - t2)) / ((t1 - t0) * (t1 - t2));
        let l2 = ((at - t0) + (at - t1)) / ((t2 - t0) * (t2 - t1));
        for (c, v) in row.iter_mut().enumerate() {
            *v = l0 * samples[j][c] + l1 * samples[j + 1][c] + l2 * samples[j + 2][c];
        }
    }
    match smoothing {
        Some(w) if w > 1 => Ok(moving_average(&out, w)),
        _ => Ok(out),
    }
}

fn moving_average(rows: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    let n = rows.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let mut acc = vec![0.0; rows[i].len()];
            for row in &rows[lo..hi] {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            let k = (hi - lo) as f64;
            acc.iter().map(|a| a / k).collect()
        })
        .collect()
}
