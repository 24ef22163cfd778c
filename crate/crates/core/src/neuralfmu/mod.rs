//! A hybrid model whose right-hand side is post-processed by a network.
//!
//! The derivative pipeline is
//!
//! ```text
//! x -> base.derivative -> xdot -> xdot[input_subset] -> ANN layers -> a
//!   -> gates: p_ann * a + p_fmu * xdot[output_channel_map] -> merged xdot
//! ```
//!
//! Channels outside `output_channel_map` pass through untouched. The last
//! layer of the network spec must be a `Gates` layer.
//!
//! With a state network the base model sees `x_hat = state_net(x)` instead of
//! `x`. After an event the base model's new `x_hat` is mapped back by
//! inverting the state network.

mod inversion;
mod topology;

use std::ops::Range;

use thiserror::Error;

use crate::hybrid_ode::{EventKind, HybridModel, ModelError, ModelState};
use crate::neural::{
    backward_accumulate, forward_layers, ActivationRecord, GateParams, Layer, NetError, NetSpec,
    ParamVector,
};
use crate::solver::{self, SolveError, SolveResult, SolverOptions};

pub use inversion::{invert_state_ann, IndicatorTarget, InversionError, InversionOptions, InversionResult};
pub use topology::{vldm_topology, TopologyBuilder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("channel index {index} out of range for {n_states} states")]
    ChannelOutOfRange { index: usize, n_states: usize },
    #[error("duplicate channel index {0}")]
    DuplicateChannel(usize),
    #[error("network must end with a Gates layer of width {0}")]
    MissingGates(usize),
    #[error("network expects {expected} inputs, subset has {got}")]
    InputWidth { expected: usize, got: usize },
    #[error("state network must map {n} states to {n} states")]
    StateNetShape { n: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Base model plus derivative network and optional state network.
#[derive(Clone)]
pub struct AugmentedModel {
    base: Box<dyn HybridModel>,
    input_subset: Vec<usize>,
    output_channel_map: Vec<usize>,
    spec: NetSpec,
    params: ParamVector,
    state_net: Option<(NetSpec, ParamVector)>,
    inversion: InversionOptions,
    name: String,
}

fn check_channels(list: &[usize], n: usize) -> Result<(), AugmentError> {
    for (i, &c) in list.iter().enumerate() {
        if c >= n {
            return Err(AugmentError::ChannelOutOfRange {
                index: c,
                n_states: n,
            });
        }
        if list[..i].contains(&c) {
            return Err(AugmentError::DuplicateChannel(c));
        }
    }
    Ok(())
}

/// Forward record of one pipeline evaluation.
pub struct PipelineRecord {
    pub base_derivative: Vec<f64>,
    pub ann_output: Vec<f64>,
    pub merged: Vec<f64>,
    ann: ActivationRecord,
    gates: ActivationRecord,
}

impl AugmentedModel {
    pub fn new(
        base: Box<dyn HybridModel>,
        input_subset: Vec<usize>,
        output_channel_map: Vec<usize>,
        spec: NetSpec,
        params: ParamVector,
    ) -> Result<Self, AugmentError> {
        let n = base.n_states();
        check_channels(&input_subset, n)?;
        check_channels(&output_channel_map, n)?;
        let m = output_channel_map.len();
        match spec.layers().last() {
            Some(Layer::Gates { width }) if *width == m => {}
            _ => return Err(AugmentError::MissingGates(m)),
        }
        if spec.input_width() != input_subset.len() && spec.layers().len() > 1 {
            return Err(AugmentError::InputWidth {
                expected: spec.input_width(),
                got: input_subset.len(),
            });
        }
        let params = ParamVector::unpack(&spec, params.pack())?;
        let name = format!("{}+ann", base.name());
        Ok(Self {
            base,
            input_subset,
            output_channel_map,
            spec,
            params,
            state_net: None,
            inversion: InversionOptions::default(),
            name,
        })
    }

    /// Adds a square state network in front of the base model.
    pub fn with_state_net(
        mut self,
        spec: NetSpec,
        params: ParamVector,
        inversion: InversionOptions,
    ) -> Result<Self, AugmentError> {
        let n = self.base.n_states();
        if spec.input_width() != n || spec.output_width() != n {
            return Err(AugmentError::StateNetShape { n });
        }
        let params = ParamVector::unpack(&spec, params.pack())?;
        self.state_net = Some((spec, params));
        self.inversion = inversion;
        Ok(self)
    }

    pub fn base(&self) -> &dyn HybridModel {
        self.base.as_ref()
    }

    pub fn input_subset(&self) -> &[usize] {
        &self.input_subset
    }

    pub fn output_channel_map(&self) -> &[usize] {
        &self.output_channel_map
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), NetError> {
        self.params = ParamVector::unpack(&self.spec, values.to_vec())?;
        Ok(())
    }

    /// Replaces constants of frozen layers while keeping the parameters.
    pub fn set_layer(&mut self, index: usize, layer: Layer) -> Result<(), AugmentError> {
        let mut layers = self.spec.layers().to_vec();
        layers[index] = layer;
        let spec = NetSpec::new(layers)?;
        self.params = ParamVector::unpack(&spec, self.params.pack())?;
        self.spec = spec;
        Ok(())
    }

    pub fn gate_layer(&self) -> usize {
        self.spec.layers().len() - 1
    }

    /// Parameter indices of the gates.
    pub fn gate_range(&self) -> Range<usize> {
        self.params.layer_range(self.gate_layer())
    }

    pub fn gates(&self) -> GateParams {
        GateParams::read(&self.params, self.gate_layer())
    }

    pub fn set_gates(&mut self, gates: &GateParams) {
        let layer = self.gate_layer();
        gates.write(&mut self.params, layer);
    }

    /// Layers between the input subset and the gates.
    fn ann_layers(&self) -> Range<usize> {
        0..self.gate_layer()
    }

    /// Network output `a` for a given derivative subset, without gates.
    pub fn ann_forward(&self, subset: &[f64]) -> Result<(Vec<f64>, ActivationRecord), NetError> {
        forward_layers(&self.spec, &self.params, self.ann_layers(), subset)
    }

    /// Adds the parameter gradient of `sum d_out * a` into `d_params` and
    /// returns the gradient with respect to the derivative subset.
    pub fn ann_backward(
        &self,
        record: &ActivationRecord,
        d_out: &[f64],
        d_params: &mut [f64],
    ) -> Result<Vec<f64>, NetError> {
        backward_accumulate(&self.spec, &self.params, record, d_out, d_params)
    }

    fn base_input(&self, x: &[f64]) -> Vec<f64> {
        match &self.state_net {
            Some((spec, p)) => {
                forward_layers(spec, p, 0..spec.layers().len(), x)
                    .expect("state network shape checked on construction")
                    .0
            }
            None => x.to_vec(),
        }
    }

    /// Merges a base derivative `xdot` with the network. The gate inputs
    /// are `[a | xdot[map]]`.
    pub fn pipeline(&self, xdot: &[f64]) -> Result<PipelineRecord, NetError> {
        let subset: Vec<f64> = self.input_subset.iter().map(|&i| xdot[i]).collect();
        let (a, ann) = self.ann_forward(&subset)?;
        let mut gate_in = a.clone();
        gate_in.extend(self.output_channel_map.iter().map(|&i| xdot[i]));
        let gl = self.gate_layer();
        let (g, gates) = forward_layers(&self.spec, &self.params, gl..gl + 1, &gate_in)?;
        let mut merged = xdot.to_vec();
        for (k, &c) in self.output_channel_map.iter().enumerate() {
            merged[c] = g[k];
        }
        Ok(PipelineRecord {
            base_derivative: xdot.to_vec(),
            ann_output: a,
            merged,
            ann,
            gates,
        })
    }

    /// Pulls `adj_merged` back to the base derivative, adding parameter
    /// gradients into `d_params`.
    pub fn pipeline_backward(
        &self,
        rec: &PipelineRecord,
        adj_merged: &[f64],
        d_params: &mut [f64],
    ) -> Result<Vec<f64>, NetError> {
        let m = self.output_channel_map.len();
        let mut adj_xdot = adj_merged.to_vec();
        let adj_g: Vec<f64> = self.output_channel_map.iter().map(|&c| adj_merged[c]).collect();
        for &c in &self.output_channel_map {
            adj_xdot[c] = 0.0;
        }
        let d_gate_in = backward_accumulate(&self.spec, &self.params, &rec.gates, &adj_g, d_params)?;
        for (k, &c) in self.output_channel_map.iter().enumerate() {
            adj_xdot[c] += d_gate_in[m + k];
        }
        let d_a = &d_gate_in[..m];
        if d_a.iter().any(|&v| v != 0.0) {
            let d_subset = self.ann_backward(&rec.ann, d_a, d_params)?;
            for (k, &c) in self.input_subset.iter().enumerate() {
                adj_xdot[c] += d_subset[k];
            }
        }
        Ok(adj_xdot)
    }

    /// Merged derivative at `(t, x)` with a record for gradients.
    pub fn augmented_derivative(&self, t: f64, x: &[f64], xd: &[f64]) -> Result<PipelineRecord, ModelError> {
        let x_hat = self.base_input(x);
        let mut xdot = vec![0.0; x.len()];
        self.base.derivative(t, &x_hat, xd, &mut xdot);
        if let Some(index) = xdot.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteDerivative { t, index });
        }
        let rec = self.pipeline(&xdot).map_err(|e| ModelError::Network(e.to_string()))?;
        Ok(rec)
    }

    pub fn simulate(
        &self,
        start: &ModelState,
        t_end: f64,
        opts: &SolverOptions,
    ) -> Result<SolveResult, SolveError> {
        solver::solve(self, start, t_end, opts)
    }
}

impl HybridModel for AugmentedModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_states(&self) -> usize {
        self.base.n_states()
    }

    fn n_discrete(&self) -> usize {
        self.base.n_discrete()
    }

    fn n_indicators(&self) -> usize {
        self.base.n_indicators()
    }

    fn initial_state(&self, t0: f64) -> ModelState {
        self.base.initial_state(t0)
    }

    fn consistent_discrete(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.base.consistent_discrete(t, &self.base_input(x))
    }

    fn derivative(&self, t: f64, x: &[f64], xd: &[f64], dx: &mut [f64]) {
        match self.augmented_derivative(t, x, xd) {
            Ok(rec) => dx.copy_from_slice(&rec.merged),
            Err(_) => dx.fill(f64::NAN),
        }
    }

    fn event_indicators(&self, t: f64, x: &[f64], xd: &[f64], z: &mut [f64]) {
        self.base.event_indicators(t, &self.base_input(x), xd, z);
    }

    fn crossing_direction(&self, index: usize) -> crate::hybrid_ode::CrossingDirection {
        self.base.crossing_direction(index)
    }

    fn next_time_event(&self, t: f64) -> Option<f64> {
        self.base.next_time_event(t)
    }

    fn handle_event(
        &self,
        t: f64,
        x: &mut [f64],
        xd: &mut [f64],
        kind: EventKind,
    ) -> Result<(), ModelError> {
        let Some((spec, p)) = &self.state_net else {
            return self.base.handle_event(t, x, xd, kind);
        };
        let mut x_hat = self.base_input(x);
        self.base.handle_event(t, &mut x_hat, xd, kind)?;
        let target = match kind {
            EventKind::State(index) => {
                let mut z = vec![0.0; self.base.n_indicators()];
                self.base.event_indicators(t, &x_hat, xd, &mut z);
                Some(IndicatorTarget {
                    index,
                    positive: z[index] > 0.0,
                })
            }
            EventKind::Time => None,
        };
        let base = self.base.as_ref();
        let xd_post = xd.to_vec();
        let indicator = |xh: &[f64], index: usize| {
            let mut z = vec![0.0; base.n_indicators()];
            base.event_indicators(t, xh, &xd_post, &mut z);
            z[index]
        };
        let result = invert_state_ann(spec, p, &x_hat, x, target, &indicator, &self.inversion);
        match result {
            Ok(res) => {
                x.copy_from_slice(&res.x);
                Ok(())
            }
            Err(err) => {
                log::warn!("state inversion at t = {t}: {err}");
                let best = err.best_iterate();
                x.copy_from_slice(best);
                Ok(())
            }
        }
    }

    fn n_params(&self) -> usize {
        self.params.len()
    }

    fn derivative_vjp(
        &self,
        t: f64,
        x: &[f64],
        xd: &[f64],
        adj_dx: &[f64],
        adj_x: &mut [f64],
        adj_xd: &mut [f64],
        adj_p: &mut [f64],
    ) {
        let rec = self
            .augmented_derivative(t, x, xd)
            .expect("derivative was finite during the forward pass");
        let adj_xdot = self
            .pipeline_backward(&rec, adj_dx, adj_p)
            .expect("record taken from current parameters");
        match &self.state_net {
            None => self.base.derivative_vjp(t, x, xd, &adj_xdot, adj_x, adj_xd, &mut []),
            Some((spec, p)) => {
                let x_hat = self.base_input(x);
                let mut adj_hat = vec![0.0; x.len()];
                self.base
                    .derivative_vjp(t, &x_hat, xd, &adj_xdot, &mut adj_hat, adj_xd, &mut []);
                let (_, srec) = forward_layers(spec, p, 0..spec.layers().len(), x).expect("shape checked");
                let mut scratch = vec![0.0; p.len()];
                let back = backward_accumulate(spec, p, &srec, &adj_hat, &mut scratch).expect("fresh record");
                for (a, b) in adj_x.iter_mut().zip(back) {
                    *a += b;
                }
            }
        }
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
        // the inverted transfer through a state network is treated as identity
        if self.state_net.is_none() {
            self.base.event_vjp(t, x, xd, kind, adj_x, adj_xd);
        }
    }

    fn box_clone(&self) -> Box<dyn HybridModel> {
        Box::new(self.clone())
    }
}
