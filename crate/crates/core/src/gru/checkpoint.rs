//! Versioned JSON checkpoints (`.gru.json`).
//!
//! Tensors are stored as flat row-major arrays next to their shapes.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{GruDims, GruError, GruLayerParams, GruModel, GruParams};
use crate::pipeline::NormStats;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "thermotwin-gru";

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    dims: GruDims,
    param_count: usize,
    #[serde(default)]
    hyperparameters: serde_json::Value,
    norm_stats: NormStats,
    layers: Vec<LayerFile>,
    head_w: Vec<f64>,
    head_b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    w_r: Vec<f64>,
    w_z: Vec<f64>,
    w_h: Vec<f64>,
    b_r: Vec<f64>,
    b_z: Vec<f64>,
    b_h: Vec<f64>,
}

fn corrupt(msg: impl Into<String>) -> GruError {
    GruError::CorruptFile(msg.into())
}

fn matrix(v: Vec<f64>, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>, GruError> {
    Array2::from_shape_vec((rows, cols), v).map_err(|_| corrupt(format!("{what} has the wrong length")))
}

fn vector(v: Vec<f64>, len: usize, what: &str) -> Result<Array1<f64>, GruError> {
    if v.len() != len {
        return Err(corrupt(format!("{what} has the wrong length")));
    }
    Ok(Array1::from(v))
}

/// Serialise the model; `hyperparameters` is stored verbatim for provenance.
pub fn save_checkpoint(model: &GruModel, hyperparameters: serde_json::Value, path: &Path) -> Result<(), GruError> {
    let p = &model.params;
    let env = Envelope {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dims: model.dims,
        param_count: model.param_count(),
        hyperparameters,
        norm_stats: model.norm.clone(),
        layers: p
            .layers
            .iter()
            .map(|l| LayerFile {
                w_r: l.w_r.iter().copied().collect(),
                w_z: l.w_z.iter().copied().collect(),
                w_h: l.w_h.iter().copied().collect(),
                b_r: l.b_r.to_vec(),
                b_z: l.b_z.to_vec(),
                b_h: l.b_h.to_vec(),
            })
            .collect(),
        head_w: p.head_w.iter().copied().collect(),
        head_b: p.head_b.to_vec(),
    };
    let text = serde_json::to_string(&env).map_err(|e| corrupt(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// Load a checkpoint and the hyperparameters stored with it.
///
/// Hidden sizes or depths outside the supported value space are accepted
/// with a warning and honoured as written.
pub fn load_checkpoint(path: &Path) -> Result<(GruModel, serde_json::Value), GruError> {
    let text = fs::read_to_string(path)?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let version = raw.get("version").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("missing version"))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(GruError::VersionMismatch { found: version as u32, expected: CHECKPOINT_VERSION });
    }
    let env: Envelope = serde_json::from_value(raw).map_err(|e| corrupt(e.to_string()))?;
    if env.format != FORMAT {
        return Err(corrupt(format!("unknown format {:?}", env.format)));
    }
    let d = env.dims;
    if [d.d_x, d.d_h, d.layers, d.t_e, d.t_d, d.d_out].contains(&0) {
        return Err(corrupt("zero dimension"));
    }
    if !d.is_standard() {
        tracing::warn!(hidden = d.d_h, layers = d.layers, "checkpoint dimensions outside the supported value space");
    }
    if env.layers.len() != d.layers {
        return Err(corrupt("layer count does not match dims"));
    }
    let ns = &env.norm_stats;
    if ns.input_mean.len() != d.d_x || ns.input_std.len() != d.d_x || ns.output_mean.len() != d.d_out || ns.output_std.len() != d.d_out {
        return Err(corrupt("normalisation statistics do not match dims"));
    }
    let mut layers = Vec::with_capacity(d.layers);
    for (l, lf) in env.layers.into_iter().enumerate() {
        let cols = d.d_h + d.layer_input(l);
        layers.push(GruLayerParams {
            w_r: matrix(lf.w_r, d.d_h, cols, "W_r")?,
            w_z: matrix(lf.w_z, d.d_h, cols, "W_z")?,
            w_h: matrix(lf.w_h, d.d_h, cols, "W_h")?,
            b_r: vector(lf.b_r, d.d_h, "b_r")?,
            b_z: vector(lf.b_z, d.d_h, "b_z")?,
            b_h: vector(lf.b_h, d.d_h, "b_h")?,
        });
    }
    let params = GruParams {
        layers,
        head_w: matrix(env.head_w, d.head_width(), d.d_h, "head weight")?,
        head_b: vector(env.head_b, d.head_width(), "head bias")?,
    };
    let model = GruModel { dims: d, params, norm: env.norm_stats, generation: 0 };
    Ok((model, env.hyperparameters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::predict;
    use ndarray::Array2;

    fn model(hidden: usize) -> GruModel {
        let dims = GruDims { d_x: 4, d_h: hidden, layers: 2, t_e: 5, t_d: 2, d_out: 3 };
        let mut m = GruModel::init(dims, 9).unwrap();
        m.norm = NormStats {
            input_mean: vec![0.1, 0.2, 1.0 / 3.0, 4.0],
            input_std: vec![1.0, 2.0, 3.0, 0.7],
            output_mean: vec![5.0, 6.0, 7.0],
            output_std: vec![0.5, 0.25, 1.0 / 7.0],
        };
        m
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gru.json");
        let m = model(6);
        save_checkpoint(&m, serde_json::json!({"lr": 1e-3}), &path).unwrap();
        let (back, hyper) = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(hyper["lr"], 1e-3);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) / 3.0);
        assert_eq!(predict(x.view(), &m).unwrap(), predict(x.view(), &back).unwrap());
    }

    #[test]
    fn nonstandard_hidden_is_loaded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gru.json");
        save_checkpoint(&model(3), serde_json::Value::Null, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().0.dims.d_h, 3);
    }

    #[test]
    fn truncated_and_mismatched_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gru.json");
        save_checkpoint(&model(4), serde_json::Value::Null, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(GruError::CorruptFile(_))));

        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        fs::write(&path, bumped).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(GruError::VersionMismatch { found: 2, .. })));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["head_b"].as_array_mut().unwrap().pop();
        fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(GruError::CorruptFile(_))));
    }
}
