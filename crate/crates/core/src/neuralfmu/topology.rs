//! Builders for the derivative-network layouts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AugmentError, AugmentedModel};
use crate::hybrid_ode::HybridModel;
use crate::neural::{init_shift_scale_from_stats, Activation, ChannelStats, Layer, NetError, NetSpec, ParamVector};
use crate::solver::Solution;

/// `pre ShiftScale -> Dense(tanh)* -> Dense(out) -> post InverseShiftScale -> Gates`
#[derive(Debug, Clone)]
pub struct TopologyBuilder {
    input_subset: Vec<usize>,
    output_channel_map: Vec<usize>,
    hidden: Vec<usize>,
    output_activation: Activation,
    seed: u64,
}

impl TopologyBuilder {
    pub fn new(input_subset: Vec<usize>, output_channel_map: Vec<usize>) -> Self {
        Self {
            input_subset,
            output_channel_map,
            hidden: vec![32],
            output_activation: Activation::Tanh,
            seed: 0,
        }
    }

    pub fn hidden(mut self, widths: &[usize]) -> Self {
        self.hidden = widths.to_vec();
        self
    }

    pub fn output_activation(mut self, activation: Activation) -> Self {
        self.output_activation = activation;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn spec(&self) -> Result<NetSpec, NetError> {
        let n_in = self.input_subset.len();
        let n_out = self.output_channel_map.len();
        let mut layers = vec![Layer::ShiftScale { width: n_in }];
        let mut width = n_in;
        for &h in &self.hidden {
            layers.push(Layer::dense(width, h, Activation::Tanh));
            width = h;
        }
        layers.push(Layer::dense(width, n_out, self.output_activation));
        layers.push(Layer::InverseShiftScale {
            shift: vec![0.0; n_out],
            scale: vec![1.0; n_out],
        });
        layers.push(Layer::Gates { width: n_out });
        NetSpec::new(layers)
    }

    /// Seeded Xavier weights, identity pre/post processing, neutral gates.
    pub fn build(&self, base: Box<dyn HybridModel>) -> Result<AugmentedModel, AugmentError> {
        let spec = self.spec()?;
        let params = ParamVector::init(&spec, &mut ChaCha8Rng::seed_from_u64(self.seed));
        AugmentedModel::new(
            base,
            self.input_subset.clone(),
            self.output_channel_map.clone(),
            spec,
            params,
        )
    }
}

/// Vehicle topology: derivatives of position, speed and consumption feed the
/// network, which corrects the acceleration channel.
pub fn vldm_topology(base: Box<dyn HybridModel>, seed: u64) -> Result<AugmentedModel, AugmentError> {
    TopologyBuilder::new(vec![3, 4, 5], vec![4]).seed(seed).build(base)
}

impl AugmentedModel {
    /// Base-model derivatives at every saved row of `reference`.
    pub fn base_derivative_samples(&self, reference: &Solution) -> Vec<Vec<f64>> {
        let n = self.n_states();
        reference
            .times
            .iter()
            .zip(&reference.states)
            .zip(&reference.discrete)
            .map(|((&t, x), xd)| {
                let mut dx = vec![0.0; n];
                self.base.derivative(t, x, xd, &mut dx);
                dx
            })
            .collect()
    }

    /// Sets the first `ShiftScale` from the statistics of the input subset
    /// and the frozen `InverseShiftScale` before the gates from the mapped
    /// channels, so that both sides work on standardized values.
    pub fn init_processing(&mut self, xdot_samples: &[Vec<f64>]) -> Result<(), AugmentError> {
        let subset: Vec<Vec<f64>> = xdot_samples
            .iter()
            .map(|row| self.input_subset.iter().map(|&i| row[i]).collect())
            .collect();
        let mapped: Vec<Vec<f64>> = xdot_samples
            .iter()
            .map(|row| self.output_channel_map.iter().map(|&i| row[i]).collect())
            .collect();
        if let Some(Layer::ShiftScale { width }) = self.spec.layers().first().cloned() {
            let (shift, scale) = init_shift_scale_from_stats(&subset)?;
            let p = self.params.layer_mut(0);
            p[..width].copy_from_slice(&shift);
            p[width..].copy_from_slice(&scale);
        }
        let post = self.gate_layer().checked_sub(1);
        if let Some(index) = post {
            if let Layer::InverseShiftScale { .. } = self.spec.layers()[index] {
                let (shift, scale) = init_shift_scale_from_stats(&mapped)?;
                self.set_layer(index, Layer::InverseShiftScale { shift, scale })?;
            }
        }
        Ok(())
    }

    /// Mean and standard deviation of the network input over `xdot_samples`
    /// after the pre-processing layer.
    pub fn preprocessed_stats(&self, xdot_samples: &[Vec<f64>]) -> Result<ChannelStats, NetError> {
        let rows = xdot_samples
            .iter()
            .map(|row| {
                let subset: Vec<f64> = self.input_subset.iter().map(|&i| row[i]).collect();
                let p = self.params.layer(0);
                let w = subset.len();
                (0..w).map(|i| p[w + i] * (subset[i] + p[i])).collect()
            })
            .collect::<Vec<Vec<f64>>>();
        ChannelStats::from_samples(&rows)
    }
}
