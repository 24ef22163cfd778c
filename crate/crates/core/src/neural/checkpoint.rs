//! Parameter checkpoints: `index,value` CSV plus a sidecar layer listing.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Activation, Layer, NetError, NetSpec, ParamVector};

/// `net.csv` -> `net.csv.spec`
pub fn spec_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".spec");
    PathBuf::from(s)
}

fn ckpt_err(path: &Path, msg: impl Into<String>) -> NetError {
    NetError::Checkpoint {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn spec_to_text(spec: &NetSpec) -> String {
    let mut out = String::from("# one layer per line, parameters in index order\n");
    for layer in spec.layers() {
        let line = match layer {
            Layer::Dense {
                inputs,
                outputs,
                activation,
                bias,
            } => {
                let act = match activation {
                    Activation::Identity => "identity",
                    Activation::Tanh => "tanh",
                };
                let b = if *bias { "bias" } else { "nobias" };
                format!("dense {inputs} {outputs} {act} {b}")
            }
            Layer::ShiftScale { width } => format!("shift_scale {width}"),
            Layer::InverseShiftScale { shift, scale } => {
                format!("inverse_shift_scale {} {}", join(shift), join(scale))
            }
            Layer::Gates { width } => format!("gates {width}"),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

fn spec_from_text(path: &Path, text: &str) -> Result<NetSpec, NetError> {
    let mut layers = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| ckpt_err(path, format!("line {}: {what}: {line:?}", i + 1));
        let parts: Vec<&str> = line.split_whitespace().collect();
        let usize_at = |k: usize| -> Result<usize, NetError> {
            parts
                .get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("expected an integer"))
        };
        let floats_at = |k: usize| -> Result<Vec<f64>, NetError> {
            parts
                .get(k)
                .ok_or_else(|| bad("missing values"))?
                .split(';')
                .map(|v| v.parse::<f64>().map_err(|_| bad("bad number")))
                .collect()
        };
        let layer = match parts[0] {
            "dense" => {
                let activation = match parts.get(3) {
                    Some(&"tanh") => Activation::Tanh,
                    Some(&"identity") => Activation::Identity,
                    _ => return Err(bad("unknown activation")),
                };
                let bias = match parts.get(4) {
                    Some(&"bias") => true,
                    Some(&"nobias") => false,
                    _ => return Err(bad("expected bias or nobias")),
                };
                Layer::Dense {
                    inputs: usize_at(1)?,
                    outputs: usize_at(2)?,
                    activation,
                    bias,
                }
            }
            "shift_scale" => Layer::ShiftScale { width: usize_at(1)? },
            "inverse_shift_scale" => Layer::InverseShiftScale {
                shift: floats_at(1)?,
                scale: floats_at(2)?,
            },
            "gates" => Layer::Gates { width: usize_at(1)? },
            _ => return Err(bad("unknown layer")),
        };
        layers.push(layer);
    }
    NetSpec::new(layers)
}

pub fn write_checkpoint(path: &Path, spec: &NetSpec, params: &ParamVector) -> Result<(), NetError> {
    let mut csv = String::from("index,value\n");
    for (i, v) in params.as_slice().iter().enumerate() {
        csv.push_str(&format!("{i},{v:.16e}\n"));
    }
    fs::write(path, csv).map_err(|e| ckpt_err(path, e.to_string()))?;
    let side = spec_sidecar_path(path);
    fs::write(&side, spec_to_text(spec)).map_err(|e| ckpt_err(&side, e.to_string()))
}

pub fn read_checkpoint(path: &Path) -> Result<(NetSpec, ParamVector), NetError> {
    let side = spec_sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| ckpt_err(&side, e.to_string()))?;
    let spec = spec_from_text(&side, &text)?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| ckpt_err(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| ckpt_err(path, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["index", "value"] {
        return Err(ckpt_err(path, "expected header `index,value`"));
    }
    let mut values = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| ckpt_err(path, e.to_string()))?;
        let index: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| ckpt_err(path, format!("row {}: bad index", row + 2)))?;
        if index != values.len() {
            return Err(ckpt_err(path, format!("row {}: index {index} out of order", row + 2)));
        }
        let v: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| ckpt_err(path, format!("row {}: bad value", row + 2)))?;
        values.push(v);
    }
    let params = ParamVector::unpack(&spec, values)?;
    Ok((spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip() {
        let spec = NetSpec::new(vec![
            Layer::ShiftScale { width: 2 },
            Layer::dense(2, 4, Activation::Tanh),
            Layer::Dense {
                inputs: 4,
                outputs: 1,
                activation: Activation::Identity,
                bias: false,
            },
            Layer::InverseShiftScale {
                shift: vec![0.123_456_789_012_345_68],
                scale: vec![3.0e-7],
            },
            Layer::Gates { width: 1 },
        ])
        .unwrap();
        let params = ParamVector::init(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.csv");
        write_checkpoint(&path, &spec, &params).unwrap();
        let (spec2, params2) = read_checkpoint(&path).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(params2, params);
    }
}
