//! Small feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters of all layers live in one flat [`ParamVector`]. Layer order
//! inside the vector follows the [`NetSpec`] and each layer stores:
//!
//! * `Dense`: weights row-major (`outputs x inputs`), then the bias
//! * `ShiftScale`: `width` shifts, then `width` scales
//! * `Gates`: `width` ANN gates, then `width` model gates
//! * `InverseShiftScale`: nothing, its constants are part of the `NetSpec`

mod checkpoint;
mod stats;

use std::fmt;
use std::ops::Range;

use rand::Rng;
use thiserror::Error;

pub use checkpoint::{read_checkpoint, spec_sidecar_path, write_checkpoint};
pub use stats::{init_shift_scale_from_stats, ChannelStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("layer {layer}: expected input width {expected}, got {got}")]
    WidthMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("parameter vector has length {got}, spec needs {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("activation record does not belong to the current parameters")]
    StaleRecord,
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("need at least {needed} samples per channel, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
        bias: bool,
    },
    /// `scale * (x + shift)` with trainable shift and scale.
    ShiftScale { width: usize },
    /// `x / scale - shift` with fixed constants; undoes a `ShiftScale`.
    InverseShiftScale { shift: Vec<f64>, scale: Vec<f64> },
    /// Input `[a | f]` of width `2 * width`, output `p_ann * a + p_fmu * f`.
    Gates { width: usize },
}

impl Layer {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer::Dense {
            inputs,
            outputs,
            activation,
            bias: true,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            Layer::Dense { inputs, .. } => *inputs,
            Layer::ShiftScale { width } => *width,
            Layer::InverseShiftScale { shift, .. } => shift.len(),
            Layer::Gates { width } => 2 * width,
        }
    }

    /// Width expected from the preceding layer. A `Gates` layer takes the
    /// ANN half from the chain, the caller appends the model half.
    pub fn chained_width(&self) -> usize {
        match self {
            Layer::Gates { width } => *width,
            other => other.input_width(),
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            Layer::Dense { outputs, .. } => *outputs,
            Layer::ShiftScale { width } => *width,
            Layer::InverseShiftScale { shift, .. } => shift.len(),
            Layer::Gates { width } => *width,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Layer::Dense {
                inputs,
                outputs,
                bias,
                ..
            } => inputs * outputs + if *bias { *outputs } else { 0 },
            Layer::ShiftScale { width } => 2 * width,
            Layer::InverseShiftScale { .. } => 0,
            Layer::Gates { width } => 2 * width,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "Dense",
            Layer::ShiftScale { .. } => "ShiftScale",
            Layer::InverseShiftScale { .. } => "InverseShiftScale",
            Layer::Gates { .. } => "Gates",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Dense {
                inputs,
                outputs,
                activation,
                ..
            } => {
                let act = match activation {
                    Activation::Identity => "identity",
                    Activation::Tanh => "tanh",
                };
                write!(f, "{}({inputs}, {outputs}, {act})", self.kind())
            }
            Layer::ShiftScale { width } | Layer::Gates { width } => {
                write!(f, "{}({width})", self.kind())
            }
            Layer::InverseShiftScale { shift, .. } => write!(f, "{}({})", self.kind(), shift.len()),
        }
    }
}

/// Ordered layer list with checked widths.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    layers: Vec<Layer>,
}

impl NetSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::InvalidSpec("no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.input_width() == 0 || layer.output_width() == 0 {
                return Err(NetError::InvalidSpec(format!("layer {i} has zero width")));
            }
            if let Layer::InverseShiftScale { shift, scale } = layer {
                if shift.len() != scale.len() {
                    return Err(NetError::InvalidSpec(format!(
                        "layer {i}: {} shifts but {} scales",
                        shift.len(),
                        scale.len()
                    )));
                }
                if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
                    return Err(NetError::InvalidSpec(format!("layer {i}: invalid scale")));
                }
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_width() != pair[1].chained_width() {
                return Err(NetError::WidthMismatch {
                    layer: i + 1,
                    expected: pair[1].chained_width(),
                    got: pair[0].output_width(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    /// Offsets of each layer's parameters in the flat vector.
    pub fn offsets(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.layers
            .iter()
            .map(|l| {
                let r = start..start + l.n_params();
                start = r.end;
                r
            })
            .collect()
    }
}

pub fn count_params(spec: &NetSpec) -> usize {
    spec.layers.iter().map(Layer::n_params).sum()
}

/// Flat trainable parameters of a [`NetSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    offsets: Vec<Range<usize>>,
}

impl ParamVector {
    pub fn unpack(spec: &NetSpec, values: Vec<f64>) -> Result<Self, NetError> {
        let expected = count_params(spec);
        if values.len() != expected {
            return Err(NetError::ParamLength {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            values,
            offsets: spec.offsets(),
        })
    }

    pub fn pack(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn zeros(spec: &NetSpec) -> Self {
        Self {
            values: vec![0.0; count_params(spec)],
            offsets: spec.offsets(),
        }
    }

    /// Xavier-uniform weights, zero biases, identity shift/scale and
    /// neutral gates (`p_ann = 0`, `p_fmu = 1`).
    pub fn init<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        for (i, layer) in spec.layers.iter().enumerate() {
            let slice = &mut p.values[p.offsets[i].clone()];
            match layer {
                Layer::Dense {
                    inputs, outputs, ..
                } => {
                    let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                    for w in &mut slice[..inputs * outputs] {
                        *w = rng.random_range(-limit..limit);
                    }
                }
                Layer::ShiftScale { width } => slice[*width..].fill(1.0),
                Layer::Gates { width } => slice[*width..].fill(1.0),
                Layer::InverseShiftScale { .. } => {}
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layer(&self, index: usize) -> &[f64] {
        &self.values[self.offsets[index].clone()]
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.values[self.offsets[index].clone()]
    }

    pub fn layer_range(&self, index: usize) -> Range<usize> {
        self.offsets[index].clone()
    }

    /// Cheap content hash used to detect stale activation records.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Gate parameters of a `Gates` layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub p_ann: Vec<f64>,
    pub p_fmu: Vec<f64>,
}

impl GateParams {
    pub fn neutral(width: usize) -> Self {
        Self {
            p_ann: vec![0.0; width],
            p_fmu: vec![1.0; width],
        }
    }

    pub fn read(params: &ParamVector, layer: usize) -> Self {
        let s = params.layer(layer);
        let w = s.len() / 2;
        Self {
            p_ann: s[..w].to_vec(),
            p_fmu: s[w..].to_vec(),
        }
    }

    pub fn write(&self, params: &mut ParamVector, layer: usize) {
        let s = params.layer_mut(layer);
        let w = self.p_ann.len();
        s[..w].copy_from_slice(&self.p_ann);
        s[w..].copy_from_slice(&self.p_fmu);
    }
}

/// Inputs of every evaluated layer plus the final output.
#[derive(Debug, Clone)]
pub struct ActivationRecord {
    layers: Range<usize>,
    values: Vec<Vec<f64>>,
    fingerprint: u64,
}

impl ActivationRecord {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Input to layer `index`.
    pub fn layer_input(&self, index: usize) -> &[f64] {
        &self.values[index - self.layers.start]
    }
}

pub fn forward(
    spec: &NetSpec,
    params: &ParamVector,
    input: &[f64],
) -> Result<(Vec<f64>, ActivationRecord), NetError> {
    forward_layers(spec, params, 0..spec.layers.len(), input)
}

/// Runs the contiguous sub-network `layers`.
pub fn forward_layers(
    spec: &NetSpec,
    params: &ParamVector,
    layers: Range<usize>,
    input: &[f64],
) -> Result<(Vec<f64>, ActivationRecord), NetError> {
    check_params(spec, params)?;
    let mut values = Vec::with_capacity(layers.len() + 1);
    values.push(input.to_vec());
    for li in layers.clone() {
        let layer = &spec.layers[li];
        let x = values.last().expect("input pushed above");
        if x.len() != layer.input_width() {
            return Err(NetError::WidthMismatch {
                layer: li,
                expected: layer.input_width(),
                got: x.len(),
            });
        }
        let y = layer_forward(layer, params.layer(li), x);
        values.push(y);
    }
    let out = values.last().cloned().unwrap_or_default();
    Ok((
        out,
        ActivationRecord {
            layers,
            values,
            fingerprint: params.fingerprint(),
        },
    ))
}

fn check_params(spec: &NetSpec, params: &ParamVector) -> Result<(), NetError> {
    let expected = count_params(spec);
    if params.len() != expected {
        return Err(NetError::ParamLength {
            expected,
            got: params.len(),
        });
    }
    Ok(())
}

fn layer_forward(layer: &Layer, p: &[f64], x: &[f64]) -> Vec<f64> {
    match layer {
        Layer::Dense {
            inputs,
            outputs,
            activation,
            bias,
        } => (0..*outputs)
            .map(|o| {
                let row = &p[o * inputs..(o + 1) * inputs];
                let mut z = if *bias { p[inputs * outputs + o] } else { 0.0 };
                for (w, xi) in row.iter().zip(x) {
                    z += w * xi;
                }
                activation.apply(z)
            })
            .collect(),
        Layer::ShiftScale { width } => (0..*width).map(|i| p[width + i] * (x[i] + p[i])).collect(),
        Layer::InverseShiftScale { shift, scale } => {
            (0..shift.len()).map(|i| x[i] / scale[i] - shift[i]).collect()
        }
        Layer::Gates { width } => (0..*width)
            .map(|i| p[i] * x[i] + p[width + i] * x[width + i])
            .collect(),
    }
}

/// Gradients of a scalar objective with respect to input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub input: Vec<f64>,
    pub params: Vec<f64>,
}

pub fn backward(
    spec: &NetSpec,
    params: &ParamVector,
    record: &ActivationRecord,
    d_output: &[f64],
) -> Result<Gradients, NetError> {
    let mut d_params = vec![0.0; params.len()];
    let d_input = backward_accumulate(spec, params, record, d_output, &mut d_params)?;
    Ok(Gradients {
        input: d_input,
        params: d_params,
    })
}

/// Like [`backward`] but adds the parameter gradient into `d_params`.
pub fn backward_accumulate(
    spec: &NetSpec,
    params: &ParamVector,
    record: &ActivationRecord,
    d_output: &[f64],
    d_params: &mut [f64],
) -> Result<Vec<f64>, NetError> {
    if record.fingerprint != params.fingerprint() || params.len() != d_params.len() {
        return Err(NetError::StaleRecord);
    }
    if d_output.len() != record.output().len() {
        return Err(NetError::WidthMismatch {
            layer: record.layers.end.saturating_sub(1),
            expected: record.output().len(),
            got: d_output.len(),
        });
    }
    let mut dy = d_output.to_vec();
    for li in record.layers.clone().rev() {
        let layer = &spec.layers[li];
        let x = record.layer_input(li);
        let y = record.layer_input(li + 1);
        let range = params.layer_range(li);
        let p = &params.as_slice()[range.clone()];
        let dp = &mut d_params[range];
        dy = layer_backward(layer, p, x, y, &dy, dp);
    }
    Ok(dy)
}

fn layer_backward(layer: &Layer, p: &[f64], x: &[f64], y: &[f64], dy: &[f64], dp: &mut [f64]) -> Vec<f64> {
    match layer {
        Layer::Dense {
            inputs,
            outputs,
            activation,
            bias,
        } => {
            let mut dx = vec![0.0; *inputs];
            for o in 0..*outputs {
                let dz = dy[o] * activation.slope_from_output(y[o]);
                if dz == 0.0 {
                    continue;
                }
                let row = o * inputs;
                for i in 0..*inputs {
                    dp[row + i] += dz * x[i];
                    dx[i] += p[row + i] * dz;
                }
                if *bias {
                    dp[inputs * outputs + o] += dz;
                }
            }
            dx
        }
        Layer::ShiftScale { width } => (0..*width)
            .map(|i| {
                dp[i] += dy[i] * p[width + i];
                dp[width + i] += dy[i] * (x[i] + p[i]);
                dy[i] * p[width + i]
            })
            .collect(),
        Layer::InverseShiftScale { scale, .. } => {
            (0..scale.len()).map(|i| dy[i] / scale[i]).collect()
        }
        Layer::Gates { width } => {
            let mut dx = vec![0.0; 2 * width];
            for i in 0..*width {
                dp[i] += dy[i] * x[i];
                dp[width + i] += dy[i] * x[width + i];
                dx[i] = dy[i] * p[i];
                dx[width + i] = dy[i] * p[width + i];
            }
            dx
        }
    }
}

/// Jacobian `d output / d input` of the whole network, row per output.
pub fn input_jacobian(
    spec: &NetSpec,
    params: &ParamVector,
    record: &ActivationRecord,
) -> Result<Vec<Vec<f64>>, NetError> {
    let m = record.output().len();
    let mut scratch = vec![0.0; params.len()];
    (0..m)
        .map(|o| {
            let mut seed = vec![0.0; m];
            seed[o] = 1.0;
            backward_accumulate(spec, params, record, &seed, &mut scratch)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(layers: Vec<Layer>) -> NetSpec {
        NetSpec::new(layers).unwrap()
    }

    #[test]
    fn identity_dense_passes_through() {
        let s = spec(vec![Layer::dense(2, 2, Activation::Identity)]);
        let p = ParamVector::unpack(&s, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let (y, _) = forward(&s, &p, &[3.0, 4.0]).unwrap();
        assert_eq!(y, vec![3.0, 4.0]);
    }

    #[test]
    fn shift_scale_definition() {
        let s = spec(vec![Layer::ShiftScale { width: 1 }]);
        let p = ParamVector::unpack(&s, vec![1.0, 2.0]).unwrap();
        let (y, _) = forward(&s, &p, &[0.5]).unwrap();
        assert_eq!(y, vec![3.0]);
    }

    #[test]
    fn zero_tanh_layer_outputs_zero() {
        let s = spec(vec![Layer::dense(3, 4, Activation::Tanh)]);
        let p = ParamVector::zeros(&s);
        let (y, _) = forward(&s, &p, &[1.0, -7.0, 30.0]).unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn scalar_chain_rule() {
        let s = spec(vec![Layer::Dense {
            inputs: 1,
            outputs: 1,
            activation: Activation::Identity,
            bias: false,
        }]);
        let p = ParamVector::unpack(&s, vec![3.0]).unwrap();
        let (_, rec) = forward(&s, &p, &[2.0]).unwrap();
        let g = backward(&s, &p, &rec, &[1.0]).unwrap();
        assert_eq!(g.params, vec![2.0]);
        assert_eq!(g.input, vec![3.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let s = spec(vec![
            Layer::ShiftScale { width: 2 },
            Layer::dense(2, 5, Activation::Tanh),
            Layer::dense(5, 2, Activation::Identity),
        ]);
        let p = ParamVector::init(&s, &mut ChaCha8Rng::seed_from_u64(1));
        let (_, rec) = forward(&s, &p, &[0.3, -0.2]).unwrap();
        let g = backward(&s, &p, &rec, &[0.0, 0.0]).unwrap();
        assert!(g.params.iter().chain(&g.input).all(|&v| v == 0.0));
    }

    #[test]
    fn table_counts() {
        assert_eq!(Layer::dense(3, 32, Activation::Tanh).n_params(), 128);
        assert_eq!(Layer::dense(32, 1, Activation::Tanh).n_params(), 33);
        assert_eq!(Layer::ShiftScale { width: 3 }.n_params(), 6);
        assert_eq!(Layer::Gates { width: 1 }.n_params(), 2);
        let post = Layer::InverseShiftScale {
            shift: vec![0.0],
            scale: vec![1.0],
        };
        assert_eq!(post.n_params(), 0);
    }

    #[test]
    fn width_mismatch_is_reported() {
        let err = NetSpec::new(vec![
            Layer::dense(3, 4, Activation::Tanh),
            Layer::dense(5, 1, Activation::Tanh),
        ])
        .unwrap_err();
        assert_eq!(
            err,
            NetError::WidthMismatch {
                layer: 1,
                expected: 5,
                got: 4
            }
        );
        let s = spec(vec![Layer::dense(3, 4, Activation::Tanh)]);
        let p = ParamVector::zeros(&s);
        assert!(matches!(forward(&s, &p, &[1.0]), Err(NetError::WidthMismatch { .. })));
    }

    #[test]
    fn stale_record_is_rejected() {
        let s = spec(vec![Layer::dense(2, 1, Activation::Tanh)]);
        let mut p = ParamVector::init(&s, &mut ChaCha8Rng::seed_from_u64(2));
        let (_, rec) = forward(&s, &p, &[1.0, 2.0]).unwrap();
        p.as_mut_slice()[0] += 0.1;
        assert_eq!(backward(&s, &p, &rec, &[1.0]).unwrap_err(), NetError::StaleRecord);
    }

    fn random_layer(kind: usize, rng: &mut ChaCha8Rng) -> Layer {
        let w = rng.random_range(1..5);
        let w2 = rng.random_range(1..5);
        match kind {
            0 => Layer::dense(w, w2, Activation::Tanh),
            1 => Layer::dense(w, w2, Activation::Identity),
            2 => Layer::ShiftScale { width: w },
            3 => Layer::InverseShiftScale {
                shift: (0..w).map(|_| rng.random_range(-2.0..2.0)).collect(),
                scale: (0..w).map(|_| rng.random_range(0.5..2.0)).collect(),
            },
            _ => Layer::Gates { width: w },
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Central differences with eps = 1e-6 against backward() for a random
    /// linear functional of the output.
    #[test]
    fn every_layer_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in 0..5 {
            for _ in 0..100 {
                let s = spec(vec![random_layer(kind, &mut rng)]);
                let mut p = ParamVector::zeros(&s);
                for v in p.as_mut_slice() {
                    *v = rng.random_range(-1.0..1.0);
                }
                let x: Vec<f64> = (0..s.input_width()).map(|_| rng.random_range(-1.5..1.5)).collect();
                let c: Vec<f64> = (0..s.output_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let obj = |p: &ParamVector, x: &[f64]| -> f64 {
                    let (y, _) = forward(&s, p, x).unwrap();
                    y.iter().zip(&c).map(|(a, b)| a * b).sum()
                };
                let (_, rec) = forward(&s, &p, &x).unwrap();
                let g = backward(&s, &p, &rec, &c).unwrap();
                let eps = 1e-6;
                for i in 0..p.len() {
                    let mut pp = p.clone();
                    let mut pm = p.clone();
                    pp.as_mut_slice()[i] += eps;
                    pm.as_mut_slice()[i] -= eps;
                    let fd = (obj(&pp, &x) - obj(&pm, &x)) / (2.0 * eps);
                    assert!(rel_err(fd, g.params[i]) < 1e-6, "kind {kind} param {i}: {fd} vs {}", g.params[i]);
                }
                for i in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += eps;
                    xm[i] -= eps;
                    let fd = (obj(&p, &xp) - obj(&p, &xm)) / (2.0 * eps);
                    assert!(rel_err(fd, g.input[i]) < 1e-6, "kind {kind} input {i}");
                }
            }
        }
    }

    #[test]
    fn gates_start_neutral() {
        let s = spec(vec![Layer::Gates { width: 3 }]);
        let p = ParamVector::init(&s, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(GateParams::read(&p, 0), GateParams::neutral(3));
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(values in proptest::collection::vec(-1e300f64..1e300, 17)) {
            let s = spec(vec![
                Layer::ShiftScale { width: 2 },
                Layer::dense(2, 3, Activation::Tanh),
                Layer::dense(3, 1, Activation::Identity),
            ]);
            prop_assert_eq!(count_params(&s), 17);
            let p = ParamVector::unpack(&s, values.clone()).unwrap();
            let back = ParamVector::unpack(&s, p.pack()).unwrap();
            prop_assert_eq!(back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn gates_mix_linearly(a in -10.0f64..10.0, f in -10.0f64..10.0, pa in -2.0f64..2.0, pf in -2.0f64..2.0) {
            let s = spec(vec![Layer::Gates { width: 1 }]);
            let p = ParamVector::unpack(&s, vec![pa, pf]).unwrap();
            let (y, rec) = forward(&s, &p, &[a, f]).unwrap();
            prop_assert_eq!(y[0], pa * a + pf * f);
            let g = backward(&s, &p, &rec, &[1.0]).unwrap();
            prop_assert_eq!(g.params, vec![a, f]);
        }
    }
}
