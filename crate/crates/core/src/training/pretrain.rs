//! Pre-training of the network on sampled derivatives, without solving the
//! ODE: NIPT fits the network to the identity on the mapped channels, CCPT
//! fits the merged derivative to target derivatives along a known state
//! trajectory.
//!
//! Both run Adam at a fixed step first and finish with damped Gauss–Newton
//! (Levenberg–Marquardt) iterations on the same sum of squares.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};

use super::optimizer::Adam;
use super::TrainError;
use crate::hybrid_ode::HybridModel;
use crate::neural::{ActivationRecord, NetError};
use crate::neuralfmu::{AugmentedModel, PipelineRecord};
use crate::solver::Solution;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOptions {
    /// Adam iterations.
    pub iters: usize,
    /// Adam step size.
    pub step: f64,
    /// Stop as soon as the mean squared residual drops below this.
    pub target_loss: f64,
    /// Levenberg–Marquardt iterations after Adam.
    pub polish_iters: usize,
    /// Re-initialize the shift/scale layers from the samples first.
    pub init_processing: bool,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            iters: 500,
            step: 1e-3,
            target_loss: 1e-6,
            polish_iters: 200,
            init_processing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub samples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub adam_iters: usize,
    pub polish_iters: usize,
}

impl PretrainReport {
    pub fn iterations(&self) -> usize {
        self.adam_iters + self.polish_iters
    }
}

enum Objective {
    /// Network output should reproduce the mapped channels of its input.
    Identity { xdot: Vec<Vec<f64>> },
    /// Merged derivative should match `targets` on `channels`.
    Collocation {
        xdot: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        channels: Vec<usize>,
    },
}

enum Record {
    Ann(ActivationRecord),
    Pipeline(PipelineRecord),
}

impl Objective {
    fn samples(&self) -> usize {
        match self {
            Objective::Identity { xdot } | Objective::Collocation { xdot, .. } => xdot.len(),
        }
    }

    fn width(&self, am: &AugmentedModel) -> usize {
        match self {
            Objective::Identity { .. } => am.output_channel_map().len(),
            Objective::Collocation { channels, .. } => channels.len(),
        }
    }

    fn forward(&self, am: &AugmentedModel, k: usize) -> Result<(Vec<f64>, Record), NetError> {
        match self {
            Objective::Identity { xdot } => {
                let row = &xdot[k];
                let subset: Vec<f64> = am.input_subset().iter().map(|&i| row[i]).collect();
                let (a, rec) = am.ann_forward(&subset)?;
                let r = a
                    .iter()
                    .zip(am.output_channel_map())
                    .map(|(a, &c)| a - row[c])
                    .collect();
                Ok((r, Record::Ann(rec)))
            }
            Objective::Collocation {
                xdot,
                targets,
                channels,
            } => {
                let rec = am.pipeline(&xdot[k])?;
                let r = channels.iter().map(|&c| rec.merged[c] - targets[k][c]).collect();
                Ok((r, Record::Pipeline(rec)))
            }
        }
    }

    fn backward(
        &self,
        am: &AugmentedModel,
        rec: &Record,
        adj_r: &[f64],
        d_params: &mut [f64],
    ) -> Result<(), NetError> {
        match (self, rec) {
            (Objective::Identity { .. }, Record::Ann(rec)) => {
                am.ann_backward(rec, adj_r, d_params)?;
            }
            (Objective::Collocation { channels, .. }, Record::Pipeline(rec)) => {
                let mut adj = vec![0.0; am.n_states()];
                for (&c, &a) in channels.iter().zip(adj_r) {
                    adj[c] += a;
                }
                am.pipeline_backward(rec, &adj, d_params)?;
            }
            _ => unreachable!("record kind follows the objective"),
        }
        Ok(())
    }

    fn loss(&self, am: &AugmentedModel) -> Result<f64, NetError> {
        let mut sum = 0.0;
        for k in 0..self.samples() {
            let (r, _) = self.forward(am, k)?;
            sum += r.iter().map(|v| v * v).sum::<f64>();
        }
        Ok(sum / (self.samples() * self.width(am)) as f64)
    }

    fn loss_and_gradient(&self, am: &AugmentedModel) -> Result<(f64, Vec<f64>), NetError> {
        let norm = (self.samples() * self.width(am)) as f64;
        let mut grad = vec![0.0; am.params().as_slice().len()];
        let mut sum = 0.0;
        for k in 0..self.samples() {
            let (r, rec) = self.forward(am, k)?;
            sum += r.iter().map(|v| v * v).sum::<f64>();
            let adj: Vec<f64> = r.iter().map(|v| 2.0 * v / norm).collect();
            self.backward(am, &rec, &adj, &mut grad)?;
        }
        Ok((sum / norm, grad))
    }

    /// Normal equations `J^T J` and `J^T r` over the active parameters.
    fn normal_equations(
        &self,
        am: &AugmentedModel,
        active: &[usize],
    ) -> Result<(DMatrix<f64>, DVector<f64>), NetError> {
        let p = active.len();
        let n_all = am.params().as_slice().len();
        let mut jtj = DMatrix::<f64>::zeros(p, p);
        let mut jtr = DVector::<f64>::zeros(p);
        let mut row = vec![0.0; n_all];
        let mut g = DVector::<f64>::zeros(p);
        for k in 0..self.samples() {
            let (r, rec) = self.forward(am, k)?;
            for (j, &rj) in r.iter().enumerate() {
                row.iter_mut().for_each(|v| *v = 0.0);
                let mut unit = vec![0.0; r.len()];
                unit[j] = 1.0;
                self.backward(am, &rec, &unit, &mut row)?;
                for (a, &i) in active.iter().enumerate() {
                    g[a] = row[i];
                }
                jtj.syger(1.0, &g, &g, 1.0);
                jtr.axpy(rj, &g, 1.0);
            }
        }
        // syger fills the lower triangle only
        jtj.fill_upper_triangle_with_lower_triangle();
        Ok((jtj, jtr))
    }
}

fn fit(
    am: &mut AugmentedModel,
    objective: &Objective,
    trainable: &[bool],
    opts: &PretrainOptions,
) -> Result<PretrainReport, TrainError> {
    let initial_loss = objective.loss(am)?;
    let mut report = PretrainReport {
        samples: objective.samples(),
        initial_loss,
        final_loss: initial_loss,
        adam_iters: 0,
        polish_iters: 0,
    };
    if !initial_loss.is_finite() {
        return Err(TrainError::NonFinitePretrainLoss { iteration: 0 });
    }
    let frozen: Vec<bool> = trainable.iter().map(|t| !t).collect();
    let mut adam = Adam::new(trainable.len());
    let mut loss = initial_loss;
    while loss >= opts.target_loss && report.adam_iters < opts.iters {
        let (l, grad) = objective.loss_and_gradient(am)?;
        if !l.is_finite() {
            return Err(TrainError::NonFinitePretrainLoss {
                iteration: report.adam_iters,
            });
        }
        let mut p = am.params().pack();
        adam.step(&mut p, &grad, opts.step, Some(&frozen));
        am.set_params(&p)?;
        report.adam_iters += 1;
        loss = objective.loss(am)?;
    }
    debug!("pre-training: Adam {} iterations, loss {loss:e}", report.adam_iters);

    let active: Vec<usize> = (0..trainable.len()).filter(|&i| trainable[i]).collect();
    let mut mu = 1e-3;
    while loss >= opts.target_loss && report.polish_iters < opts.polish_iters {
        let (jtj, jtr) = objective.normal_equations(am, &active)?;
        let base = am.params().pack();
        let mut improved = false;
        while mu < 1e20 {
            let mut lhs = jtj.clone();
            for i in 0..active.len() {
                lhs[(i, i)] += mu * (jtj[(i, i)] + 1e-12);
            }
            let Some(chol) = lhs.cholesky() else {
                mu *= 4.0;
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            let mut trial = base.clone();
            for (a, &i) in active.iter().enumerate() {
                trial[i] += delta[a];
            }
            am.set_params(&trial)?;
            let l = objective.loss(am)?;
            if l.is_finite() && l < loss {
                loss = l;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            am.set_params(&base)?;
            break;
        }
        report.polish_iters += 1;
        debug!("polish {}: loss {loss:e}, damping {mu:e}", report.polish_iters);
    }
    report.final_loss = loss;
    info!(
        "pre-training finished: loss {:e} -> {:e} after {} + {} iterations",
        report.initial_loss, report.final_loss, report.adam_iters, report.polish_iters
    );
    Ok(report)
}

/// Trains the network to reproduce its mapped input channels at the saved
/// rows of a single base-model reference simulation. Gates are untouched.
pub fn nipt_pretrain(
    am: &mut AugmentedModel,
    reference: &Solution,
    opts: &PretrainOptions,
) -> Result<PretrainReport, TrainError> {
    if reference.is_empty() || reference.n_states() != am.n_states() {
        return Err(TrainError::InvalidReference {
            rows: reference.len(),
            width: reference.n_states(),
            expected: am.n_states(),
        });
    }
    let xdot = am.base_derivative_samples(reference);
    if opts.init_processing {
        am.init_processing(&xdot)?;
    }
    let gates = am.gate_range();
    let trainable: Vec<bool> = (0..am.params().as_slice().len())
        .map(|i| !gates.contains(&i))
        .collect();
    fit(am, &Objective::Identity { xdot }, &trainable, opts)
}

/// Trains network and gates so that the merged derivative matches
/// `derivatives` on `channels` along the state trajectory `states`.
/// Derivatives are estimated by finite differences when absent.
pub fn ccpt_pretrain(
    am: &mut AugmentedModel,
    times: &[f64],
    states: &[Vec<f64>],
    derivatives: Option<&[Vec<f64>]>,
    channels: &[usize],
    opts: &PretrainOptions,
) -> Result<PretrainReport, TrainError> {
    let n = am.n_states();
    if states.is_empty() || states.iter().any(|row| row.len() != n) || times.len() != states.len() {
        return Err(TrainError::CcptRefused(format!(
            "collocation needs the full state trajectory: every sample must hold all {n} states"
        )));
    }
    if channels.is_empty() {
        return Err(TrainError::CcptRefused("no objective channel given".into()));
    }
    for &c in channels {
        if !am.output_channel_map().contains(&c) {
            return Err(TrainError::CcptRefused(format!(
                "the derivative of state {} is not affected by the network (mapped channels: {:?})",
                c + 1,
                am.output_channel_map().iter().map(|i| i + 1).collect::<Vec<_>>()
            )));
        }
    }
    let targets = match derivatives {
        Some(d) => {
            if d.len() != states.len() || d.iter().any(|row| row.len() != n) {
                return Err(TrainError::CcptRefused(
                    "derivative samples do not match the state samples".into(),
                ));
            }
            d.to_vec()
        }
        None => super::estimate_derivatives(times, states, None)?,
    };
    let xdot: Vec<Vec<f64>> = times
        .iter()
        .zip(states)
        .map(|(&t, x)| {
            let xd = am.base().consistent_discrete(t, x);
            let mut dx = vec![0.0; n];
            am.base().derivative(t, x, &xd, &mut dx);
            dx
        })
        .collect();
    if opts.init_processing {
        am.init_processing(&xdot)?;
    }
    let trainable = vec![true; am.params().as_slice().len()];
    let objective = Objective::Collocation {
        xdot,
        targets,
        channels: channels.to_vec(),
    };
    fit(am, &objective, &trainable, opts)
}
