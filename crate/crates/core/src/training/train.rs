//! Main training loop: one Adam step per batch element.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adjoint::gradient;
use super::batching::{make_batches_sequential, make_batches_snapshot, restore_start, BatchElement};
use super::loss::TargetSeries;
use super::optimizer::{Adam, StepSchedule};
use super::TrainError;
use crate::hybrid_ode::{HybridModel, ModelState};
use crate::neural::ParamVector;
use crate::neuralfmu::AugmentedModel;
use crate::solver::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchMode {
    /// Elements in order, each starting from where the previous ended.
    #[default]
    Sequential,
    /// Elements in seeded random order from start states cached once.
    Snapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss_channel: usize,
    pub batch_element_length: f64,
    pub epochs: usize,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<u64>,
    pub schedule: StepSchedule,
    pub seed: u64,
    pub batching: BatchMode,
    pub freeze_gates: bool,
    pub solver: SolverOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_channel: 5,
            batch_element_length: 10.0,
            epochs: 1,
            max_steps: None,
            schedule: StepSchedule::default(),
            seed: 0,
            batching: BatchMode::Sequential,
            freeze_gates: false,
            solver: SolverOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_states: usize) -> Result<(), TrainError> {
        self.schedule.validate()?;
        if self.loss_channel >= n_states {
            return Err(TrainError::ChannelOutOfRange {
                channel: self.loss_channel,
                n_states,
            });
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub epoch: usize,
    pub element: usize,
    pub loss: f64,
    pub step_size: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub const HEADER: &'static str = "step,epoch,element,loss,step_size,wall_s";

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:.16e},{:.16e},{:.6}",
                r.step, r.epoch, r.element, r.loss, r.step_size, r.wall_s
            )?;
        }
        w.flush()
    }

    /// Every column except the wall clock.
    pub fn same_run(&self, other: &History) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.step == b.step
                    && a.epoch == b.epoch
                    && a.element == b.element
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.step_size.to_bits() == b.step_size.to_bits()
            })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub history: History,
}

/// Trains `am` on `target` (samples of `cfg.loss_channel`) over
/// `[start.t, t_end]`.
pub fn train(
    am: &mut AugmentedModel,
    start: &ModelState,
    t_end: f64,
    target: &TargetSeries,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate(am.n_states())?;
    let elements: Vec<BatchElement> = match cfg.batching {
        BatchMode::Sequential => make_batches_sequential(start.t, t_end, cfg.batch_element_length, target)?,
        BatchMode::Snapshot => {
            make_batches_snapshot(am, start, cfg.batch_element_length, t_end, target, &cfg.solver)?
        }
    };
    if let Some(el) = elements.iter().find(|e| e.target.is_empty()) {
        return Err(TrainError::InvalidConfig(format!(
            "batch element {} [{}, {}] holds no target samples",
            el.index, el.t_start, el.t_end
        )));
    }
    let n_params = am.params().as_slice().len();
    let mut frozen = vec![false; n_params];
    if cfg.freeze_gates {
        for i in am.gate_range() {
            frozen[i] = true;
        }
    }
    let mut adam = Adam::new(n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = History::default();
    let clock = Instant::now();
    let mut step: u64 = 0;
    let limit = cfg.max_steps.unwrap_or(u64::MAX);

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..elements.len()).collect();
        if cfg.batching == BatchMode::Snapshot {
            order.shuffle(&mut rng);
        }
        let mut state = start.clone();
        let mut epoch_loss = 0.0;
        for &e in &order {
            if step >= limit {
                break 'epochs;
            }
            let el = &elements[e];
            let from = match cfg.batching {
                BatchMode::Sequential => {
                    state.t = el.t_start;
                    state.clone()
                }
                BatchMode::Snapshot => restore_start(am, el)?,
            };
            let eg = gradient(am, &from, el.t_end, &el.target, cfg.loss_channel, &cfg.solver).map_err(|source| {
                TrainError::ElementFailed {
                    step,
                    element: el.index,
                    source: Box::new(source),
                }
            })?;
            let param_norm = am.params().as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            if !eg.loss.is_finite() || eg.grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteLoss {
                    step,
                    element: el.index,
                    param_norm,
                });
            }
            let lr = cfg.schedule.step_size(step);
            let mut p = am.params().pack();
            adam.step(&mut p, &eg.grad, lr, Some(&frozen));
            am.set_params(&p)?;
            history.rows.push(HistoryRow {
                step,
                epoch,
                element: el.index,
                loss: eg.loss,
                step_size: lr,
                wall_s: clock.elapsed().as_secs_f64(),
            });
            debug!("step {step} element {} loss {:e} lr {lr:e}", el.index, eg.loss);
            epoch_loss += eg.loss;
            state = eg.solve.final_state;
            step += 1;
        }
        info!(
            "epoch {epoch}: mean element loss {:e}",
            epoch_loss / elements.len() as f64
        );
    }
    Ok(TrainOutcome {
        params: am.params().clone(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid_ode::DampedOscillator;
    use crate::neural::{Activation, GateParams};
    use crate::neuralfmu::TopologyBuilder;
    use crate::training::{mse_loss, simulate_sequential};

    fn setup(seed: u64) -> (AugmentedModel, ModelState, TargetSeries) {
        let truth = DampedOscillator::new(1.2, 0.1, 1.0, 0.0);
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
        let values = times.iter().map(|&t| truth.exact(t)[0]).collect();
        let am = TopologyBuilder::new(vec![0, 1], vec![1])
            .hidden(&[4])
            .output_activation(Activation::Identity)
            .seed(seed)
            .build(Box::new(DampedOscillator::default()))
            .unwrap();
        let start = am.initial_state(0.0);
        (am, start, TargetSeries::new(times, values).unwrap())
    }

    fn config(batching: BatchMode) -> TrainConfig {
        TrainConfig {
            loss_channel: 0,
            batch_element_length: 1.0,
            epochs: 3,
            batching,
            ..Default::default()
        }
    }

    #[test]
    fn frozen_neutral_gates_keep_the_loss() {
        let (mut am, start, target) = setup(1);
        let cfg = TrainConfig {
            freeze_gates: true,
            ..config(BatchMode::Sequential)
        };
        let before = am.params().clone();
        let out = train(&mut am, &start, 4.0, &target, &cfg).unwrap();
        assert_eq!(out.params, before);
        let first: Vec<f64> = out.history.rows[..4].iter().map(|r| r.loss).collect();
        for chunk in out.history.rows.chunks(4) {
            let l: Vec<f64> = chunk.iter().map(|r| r.loss).collect();
            assert_eq!(l, first);
        }
    }

    #[test]
    fn step_sizes_follow_the_schedule() {
        let (mut am, start, target) = setup(2);
        let out = train(&mut am, &start, 4.0, &target, &config(BatchMode::Sequential)).unwrap();
        assert_eq!(out.history.rows.len(), 12);
        for r in &out.history.rows {
            assert_eq!(r.step_size, (1e-3 * 0.95f64.powi(r.step as i32)).max(1e-5));
        }
    }

    #[test]
    fn training_reduces_the_loss() {
        let (mut am, start, target) = setup(3);
        am.set_gates(&GateParams {
            p_ann: vec![0.5],
            p_fmu: vec![1.0],
        });
        let cfg = TrainConfig {
            epochs: 40,
            batch_element_length: 4.0,
            schedule: StepSchedule {
                initial: 1e-2,
                multiplier: 1.0,
                floor: 1e-2,
            },
            ..config(BatchMode::Sequential)
        };
        let out = train(&mut am, &start, 4.0, &target, &cfg).unwrap();
        let first = out.history.rows.first().unwrap().loss;
        let last = out.history.rows.last().unwrap().loss;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let run = |mode| {
            let (mut am, start, target) = setup(4);
            am.set_gates(&GateParams {
                p_ann: vec![0.3],
                p_fmu: vec![1.0],
            });
            train(&mut am, &start, 4.0, &target, &config(mode)).unwrap().history
        };
        assert!(run(BatchMode::Sequential).same_run(&run(BatchMode::Sequential)));
        assert!(run(BatchMode::Snapshot).same_run(&run(BatchMode::Snapshot)));
    }

    #[test]
    fn sequential_elements_carry_state() {
        // with unchanged parameters the element losses come from one
        // continuous chain of element simulations
        let (mut am, start, target) = setup(5);
        let cfg = TrainConfig {
            freeze_gates: true,
            epochs: 1,
            ..config(BatchMode::Sequential)
        };
        let out = train(&mut am, &start, 4.0, &target, &cfg).unwrap();
        let els = make_batches_sequential(0.0, 4.0, 1.0, &target).unwrap();
        let parts = simulate_sequential(&am, &start, &els, &cfg.solver).unwrap();
        for (k, part) in parts.iter().enumerate() {
            let l = mse_loss(&part.solution, &els[k].target, 0).unwrap();
            assert_eq!(l, out.history.rows[k].loss, "element {k}");
        }
    }

    #[test]
    fn history_csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let (mut am, start, target) = setup(6);
        let out = train(&mut am, &start, 4.0, &target, &config(BatchMode::Sequential)).unwrap();
        out.history.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), History::HEADER);
        assert_eq!(text.lines().count(), 13);
    }

    #[test]
    fn bad_channel_is_rejected() {
        let (mut am, start, target) = setup(7);
        let cfg = TrainConfig {
            loss_channel: 9,
            ..config(BatchMode::Sequential)
        };
        assert!(matches!(
            train(&mut am, &start, 4.0, &target, &cfg),
            Err(TrainError::ChannelOutOfRange { .. })
        ));
    }
}
