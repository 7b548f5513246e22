//! Model checkpoints: one TNS1 file per parameter tensor plus a plain-text
//! `manifest.txt`:
//!
//! ```text
//! in_channels 3
//! embed_dim 16
//! param conv1.weight conv1.weight.tns
//! ...
//! hparam lambda 30
//! ```

use std::fs;
use std::path::Path;

use super::model::EmbeddingModel;
use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor, Tensor};

pub const MANIFEST: &str = "manifest.txt";

/// Writes `model` and free-form hyperparameters (`key value`) into `dir`,
/// creating it if needed. Keys and values must not contain whitespace.
pub fn save_checkpoint(dir: impl AsRef<Path>, model: &EmbeddingModel, hparams: &[(String, String)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("in_channels {}\nembed_dim {}\n", model.in_channels(), model.embed_dim());
    for (name, dims, data) in model.params() {
        let file = format!("{name}.tns");
        write_tensor(dir.join(&file), &Tensor::from_f64(dims, data)?)?;
        manifest.push_str(&format!("param {name} {file}\n"));
    }
    for (k, v) in hparams {
        if k.is_empty() || v.is_empty() || k.contains(char::is_whitespace) || v.contains(char::is_whitespace) {
            return Err(Error::param(format!("hyperparameter {k:?} = {v:?} must be non-empty without whitespace")));
        }
        manifest.push_str(&format!("hparam {k} {v}\n"));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reads a checkpoint written by [`save_checkpoint`].
///
/// Parameters are stored as f32, so a reloaded model matches the saved one
/// to single precision.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(EmbeddingModel, Vec<(String, String)>)> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |line: &str| Error::format("manifest", format!("unrecognized line {line:?}"));

    let mut in_channels = None;
    let mut embed_dim = None;
    let mut files = Vec::new();
    let mut hparams = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["in_channels", v] => in_channels = Some(v.parse::<usize>().map_err(|_| bad(line))?),
            ["embed_dim", v] => embed_dim = Some(v.parse::<usize>().map_err(|_| bad(line))?),
            ["param", name, file] => files.push((name.to_string(), file.to_string())),
            ["hparam", k, v] => hparams.push((k.to_string(), v.to_string())),
            _ => return Err(bad(line)),
        }
    }
    let (Some(cin), Some(dim)) = (in_channels, embed_dim) else {
        return Err(Error::format("manifest", "missing in_channels or embed_dim"));
    };
    if cin == 0 || dim == 0 {
        return Err(Error::format("manifest", "channel counts must be positive"));
    }

    let mut model = EmbeddingModel::zeros(cin, dim);
    let shapes: Vec<(String, Vec<usize>)> = model.params().into_iter().map(|(n, s, _)| (n, s)).collect();
    for ((name, slot), (_, dims)) in model.params_mut().into_iter().zip(shapes) {
        let Some((_, file)) = files.iter().find(|(n, _)| *n == name) else {
            return Err(Error::format("manifest", format!("no entry for parameter {name}")));
        };
        let t = read_tensor(dir.join(file))?;
        if t.dims != dims {
            return Err(Error::format("TNS1", format!("{name} has dims {:?}, expected {dims:?}", t.dims)));
        }
        *slot = t.to_f64();
    }
    if !model.is_finite() {
        return Err(Error::format("TNS1", "checkpoint contains non-finite parameters"));
    }
    Ok((model, hparams))
}
