//! Recovering the model-side state after an event when a state network sits
//! in front of the base model.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::neural::{forward, input_jacobian, NetError, NetSpec, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct InversionOptions {
    pub max_iters: usize,
    pub x_tol: f64,
    pub indicator_penalty_weight: f64,
    /// Sharpness of the softplus hinge on the indicator sign.
    pub penalty_sharpness: f64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            x_tol: 1e-10,
            indicator_penalty_weight: 1e3,
            penalty_sharpness: 1e8,
        }
    }
}

/// Sign the indicator should have at the solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndicatorTarget {
    pub index: usize,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InversionError {
    #[error("no convergence after {iterations} iterations, residual {residual:e}")]
    NotConverged {
        best: Vec<f64>,
        residual: f64,
        iterations: usize,
    },
    #[error(transparent)]
    Net(#[from] NetError),
}

impl InversionError {
    pub fn best_iterate(&self) -> &[f64] {
        match self {
            InversionError::NotConverged { best, .. } => best,
            InversionError::Net(_) => &[],
        }
    }
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct Eval {
    residuals: Vec<f64>,
    jacobian: DMatrix<f64>,
    cost: f64,
}

/// Solves `state_net(x) ~= x_hat_target` by damped Gauss–Newton starting at
/// `x_init`. With an indicator target, the extra residual
/// `sqrt(w) * softplus(-k * s * z(state_net(x))) / k` pushes the indicator to
/// the requested side; `z` is differentiated by central differences.
pub fn invert_state_ann(
    spec: &NetSpec,
    params: &ParamVector,
    x_hat_target: &[f64],
    x_init: &[f64],
    target: Option<IndicatorTarget>,
    indicator: &dyn Fn(&[f64], usize) -> f64,
    opts: &InversionOptions,
) -> Result<InversionResult, InversionError> {
    let n = x_init.len();
    let w = opts.indicator_penalty_weight.sqrt();
    let k = opts.penalty_sharpness;

    let evaluate = |x: &[f64]| -> Result<Eval, InversionError> {
        let (y, rec) = forward(spec, params, x)?;
        let jac = input_jacobian(spec, params, &rec)?;
        let mut residuals: Vec<f64> = y.iter().zip(x_hat_target).map(|(a, b)| a - b).collect();
        let rows = n + usize::from(target.is_some());
        let mut jacobian = DMatrix::zeros(rows, n);
        for (r, row) in jac.iter().enumerate() {
            for c in 0..n {
                jacobian[(r, c)] = row[c];
            }
        }
        if let Some(tg) = target {
            let s = if tg.positive { 1.0 } else { -1.0 };
            let z = indicator(&y, tg.index);
            residuals.push(w * softplus(-k * s * z) / k);
            // dz/dy by central differences, then chain through the network
            let mut dz_dy = vec![0.0; n];
            for (j, d) in dz_dy.iter_mut().enumerate() {
                let eps = 1e-7 * y[j].abs().max(1.0);
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += eps;
                ym[j] -= eps;
                *d = (indicator(&yp, tg.index) - indicator(&ym, tg.index)) / (2.0 * eps);
            }
            let slope = -w * s * sigmoid(-k * s * z);
            for c in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += dz_dy[j] * jac[j][c];
                }
                jacobian[(n, c)] = slope * acc;
            }
        }
        let cost = residuals.iter().map(|r| r * r).sum();
        Ok(Eval {
            residuals,
            jacobian,
            cost,
        })
    };

    let mut x = x_init.to_vec();
    let mut cur = evaluate(&x)?;
    for iteration in 0..opts.max_iters {
        let j = &cur.jacobian;
        let r = DVector::from_vec(cur.residuals.clone());
        let jt = j.transpose();
        let jtj = &jt * j;
        let rhs = -(&jt * r);
        let step = match jtj.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                let mu = 1e-12 * jtj.trace().abs().max(1e-300);
                let damped = jtj + DMatrix::identity(n, n) * mu;
                match damped.lu().solve(&rhs) {
                    Some(s) => s,
                    None => break,
                }
            }
        };
        if step.norm() < opts.x_tol {
            return Ok(InversionResult {
                x,
                iterations: iteration,
                residual: cur.cost.sqrt(),
            });
        }
        // step halving until the cost does not increase
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            let ev = evaluate(&trial)?;
            if ev.cost <= cur.cost {
                accepted = Some((trial, ev));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, ev)) = accepted else {
            break;
        };
        let moved: f64 = trial
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        x = trial;
        cur = ev;
        if moved < opts.x_tol {
            return Ok(InversionResult {
                x,
                iterations: iteration + 1,
                residual: cur.cost.sqrt(),
            });
        }
    }
    Err(InversionError::NotConverged {
        residual: cur.cost.sqrt(),
        best: x,
        iterations: opts.max_iters,
    })
}
