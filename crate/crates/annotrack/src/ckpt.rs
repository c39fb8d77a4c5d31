//! Versioned model checkpoints: a JSON document with a magic string, a
//! hyperparameter map, and a flat parameter manifest of named tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parameterized;

#[derive(Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub hyper: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn capture<P: Parameterized>(
        magic: &str,
        hyper: BTreeMap<String, serde_json::Value>,
        model: &mut P,
        names: &[&str],
    ) -> Self {
        let mut tensors = Vec::new();
        let mut idx = 0usize;
        model.visit(&mut |v, _| {
            let name = names
                .get(idx)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("tensor{idx}"));
            tensors.push(TensorEntry { name, len: v.len(), data: v.to_vec() });
            idx += 1;
        });
        Checkpoint { magic: magic.to_string(), hyper, tensors }
    }

    pub fn restore<P: Parameterized>(&self, magic: &str, model: &mut P) -> Result<()> {
        if self.magic != magic {
            return Err(Error::invalid(format!(
                "checkpoint magic `{}` does not match expected `{magic}`",
                self.magic
            )));
        }
        let mut idx = 0usize;
        let mut failed: Option<String> = None;
        model.visit(&mut |v, _| {
            if failed.is_some() {
                return;
            }
            match self.tensors.get(idx) {
                Some(t) if t.len == v.len() => v.copy_from_slice(&t.data),
                Some(t) => {
                    failed = Some(format!("tensor `{}` has {} values, model wants {}", t.name, t.len, v.len()))
                }
                None => failed = Some(format!("checkpoint has only {} tensors", self.tensors.len())),
            }
            idx += 1;
        });
        if let Some(msg) = failed {
            return Err(Error::invalid(msg));
        }
        if idx != self.tensors.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} tensors, model consumed {idx}",
                self.tensors.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn hyper_u64(&self, key: &str) -> Result<u64> {
        self.hyper
            .get(key)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::invalid(format!("checkpoint missing hyperparameter `{key}`")))
    }

    pub fn hyper_str(&self, key: &str) -> Result<&str> {
        self.hyper
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::invalid(format!("checkpoint missing hyperparameter `{key}`")))
    }
}

/// Training curve file: `step loss` per line.
pub fn write_curve(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let mut s = String::new();
    for (step, loss) in curve {
        s.push_str(&format!("{step} {loss}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
