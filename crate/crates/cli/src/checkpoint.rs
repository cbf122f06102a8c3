//! Checkpoints: a JSON manifest plus one ATNS blob per parameter tensor.
//! Every blob, the network architecture and the training data are pinned by
//! SHA-256, and loading refuses anything that does not match.

use std::collections::BTreeMap;
use std::path::Path;

use armacell::cells::{NetworkParams, NetworkSpec};
use armacell::tensor::io;
use armacell::training::History;
use serde::{Deserialize, Serialize};

use crate::data::{create_dir, sha256_hex, write_file, write_json};
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub spec: NetworkSpec,
    pub spec_sha256: String,
    pub seed: u64,
    /// Epoch whose weights were kept (0 = initial weights).
    pub epoch: usize,
    pub history: History,
    pub data_sha256: String,
    pub tensors: Vec<TensorEntry>,
}

fn spec_hash(spec: &NetworkSpec) -> String {
    sha256_hex(serde_json::to_string(spec).expect("serializable").as_bytes())
}

pub fn save(
    dir: &Path,
    spec: &NetworkSpec,
    params: &NetworkParams,
    seed: u64,
    history: &History,
    data_sha256: &str,
) -> Result<Manifest> {
    create_dir(dir)?;
    let mut tensors = Vec::new();
    for (name, t) in params.named_tensors(spec)? {
        let bytes = io::to_bytes(&t);
        let file = format!("{name}.atns");
        write_file(&dir.join(&file), &bytes)?;
        tensors.push(TensorEntry {
            name,
            file,
            shape: t.shape().to_vec(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format: FORMAT,
        spec: spec.clone(),
        spec_sha256: spec_hash(spec),
        seed,
        epoch: history.best_epoch,
        history: history.clone(),
        data_sha256: data_sha256.to_string(),
        tensors,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Loads and verifies a checkpoint directory.
pub fn load(dir: &Path) -> Result<(Manifest, NetworkParams)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))?;
    if manifest.format != FORMAT {
        return Err(CliError::Integrity(format!(
            "unsupported checkpoint format {}",
            manifest.format
        )));
    }
    if spec_hash(&manifest.spec) != manifest.spec_sha256 {
        return Err(CliError::Integrity(
            "network spec does not match its recorded hash".into(),
        ));
    }
    let mut named = BTreeMap::new();
    for entry in &manifest.tensors {
        let file = dir.join(&entry.file);
        let bytes = std::fs::read(&file).map_err(|e| CliError::io(&file, e))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(CliError::Integrity(format!(
                "{} does not match its recorded hash",
                entry.file
            )));
        }
        let t = io::from_bytes(&bytes)?;
        if t.shape() != entry.shape.as_slice() {
            return Err(CliError::Integrity(format!(
                "{} has shape {:?}, manifest says {:?}",
                entry.file,
                t.shape(),
                entry.shape
            )));
        }
        named.insert(entry.name.clone(), t);
    }
    let params = NetworkParams::from_named(&manifest.spec, named)
        .map_err(|e| CliError::Integrity(e.to_string()))?;
    Ok((manifest, params))
}
