//! Losses, gradients through the solver, batching, pre-training and the
//! training loop.

mod adjoint;
mod batching;
mod derivatives;
mod loss;
mod optimizer;
mod pretrain;
mod train;

pub use adjoint::{gradient, tape_gradient, AdjointResult, ElementGradient};
pub use batching::{
    concatenate, make_batches_sequential, make_batches_snapshot, restore_start, simulate_sequential, BatchElement,
};
pub use derivatives::estimate_derivatives;
pub use loss::{mse_loss, mse_loss_with_rows, LossGradient, TargetSeries};
pub use optimizer::{Adam, StepSchedule};
pub use pretrain::{ccpt_pretrain, nipt_pretrain, PretrainOptions, PretrainReport};
pub use train::{train, BatchMode, History, HistoryRow, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::hybrid_ode::ModelError;
use crate::neural::NetError;
use crate::neuralfmu::AugmentError;
use crate::solver::SolveError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("target series is empty")]
    EmptyTarget,
    #[error("invalid target series: {0}")]
    InvalidTarget(String),
    #[error("target sample at t = {t} lies outside the solution span [{start}, {end}]")]
    TargetOutsideSolution { t: f64, start: f64, end: f64 },
    #[error("channel {channel} out of range for {n_states} states")]
    ChannelOutOfRange { channel: usize, n_states: usize },
    #[error("solve was run without a tape")]
    MissingTape,
    #[error("expected {expected} row adjoints, got {got}")]
    RowMismatch { expected: usize, got: usize },
    #[error("at least 3 samples needed, got {got}")]
    TooFewSamples { got: usize },
    #[error("sample times must increase strictly (sample {index}, t = {t})")]
    NonIncreasingTime { index: usize, t: f64 },
    #[error("batch element {element} has no cached snapshot")]
    MissingSnapshot { element: usize },
    #[error("reference has {rows} rows of width {width}, expected width {expected}")]
    InvalidReference { rows: usize, width: usize, expected: usize },
    #[error("collocation pre-training refused: {0}")]
    CcptRefused(String),
    #[error("pre-training loss became non-finite at iteration {iteration}")]
    NonFinitePretrainLoss { iteration: usize },
    #[error("non-finite loss or gradient at step {step} (batch element {element}, parameter norm {param_norm:e})")]
    NonFiniteLoss {
        step: u64,
        element: usize,
        param_norm: f64,
    },
    #[error("step {step}, batch element {element}: {source}")]
    ElementFailed {
        step: u64,
        element: usize,
        source: Box<TrainError>,
    },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}
