//! Materializing datasets and reading/writing the on-disk formats.

use std::fs;
use std::path::Path;

use armacell::datagen::{generate_video, simulate, split_sizes, VideoSpec};
use armacell::tensor::io;
use armacell::training::{FrameSet, SeriesSplits};
use armacell::Tensor;
use sha2::{Digest, Sha256};

use crate::config::{DataSource, SplitConfig};
use crate::error::{CliError, Result};

pub enum Dataset {
    /// `[T × k]`.
    Series(Tensor),
    /// `[N×T×H×W×C]` clips and their `[N×H×W×C]` next frames.
    Frames { inputs: Tensor, targets: Tensor },
}

impl Dataset {
    /// Stable fingerprint of the numbers, used to tie checkpoints to data.
    pub fn fingerprint(&self) -> String {
        match self {
            Dataset::Series(x) => sha256_hex(&io::to_bytes(x)),
            Dataset::Frames { inputs, targets } => {
                let mut bytes = io::to_bytes(inputs);
                bytes.extend(io::to_bytes(targets));
                sha256_hex(&bytes)
            }
        }
    }
}

pub fn load(source: &DataSource, seed: u64) -> Result<Dataset> {
    Ok(match source {
        DataSource::Dgp { dgp, n } => Dataset::Series(simulate(dgp, *n, seed)?),
        DataSource::Video { video, sequences } => {
            let spec = VideoSpec {
                seed,
                ..video.clone()
            };
            let (inputs, targets) = generate_video(&spec, *sequences)?;
            Dataset::Frames { inputs, targets }
        }
        DataSource::Csv { path } => Dataset::Series(read_csv(path)?),
        DataSource::Tensors { inputs, targets } => {
            let read = |p: &Path| {
                io::load(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            };
            Dataset::Frames {
                inputs: read(inputs)?,
                targets: read(targets)?,
            }
        }
    })
}

pub fn series_splits(series: Tensor, split: &SplitConfig) -> Result<SeriesSplits> {
    let sizes = split_sizes(series.shape()[0], split.train_frac, split.val_frac)?;
    Ok(SeriesSplits::new(series, sizes)?)
}

/// Chronological split of clips into train, validation and test sets.
pub fn frame_splits(
    inputs: &Tensor,
    targets: &Tensor,
    split: &SplitConfig,
) -> Result<(FrameSet, FrameSet, FrameSet)> {
    let n = inputs.shape()[0];
    if targets.shape().first() != Some(&n) {
        return Err(CliError::Config(format!(
            "{n} input clips but target shape {:?}",
            targets.shape()
        )));
    }
    let s = split_sizes(n, split.train_frac, split.val_frac)?;
    let set = |a: usize, b: usize| FrameSet {
        inputs: inputs.slice_axis0(a, b),
        targets: targets.slice_axis0(a, b),
    };
    Ok((
        set(0, s.train),
        set(s.train, s.train + s.val),
        set(s.train + s.val, n),
    ))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(
        &fs::read(path).map_err(|e| CliError::io(path, e))?,
    ))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_file(path, io::to_bytes(t))
}

/// Writes rows with a header through the csv crate so quoting is handled.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let io_err = |e: csv::Error| CliError::Io {
        path: path.display().to_string(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `t,x1[,x2..]` with full round-trip precision.
pub fn series_csv_rows(x: &Tensor) -> (Vec<String>, Vec<Vec<String>>) {
    let k = x.shape()[1];
    let header = std::iter::once("t".to_string())
        .chain((1..=k).map(|j| format!("x{j}")))
        .collect();
    let rows = x
        .data()
        .chunks(k)
        .enumerate()
        .map(|(t, row)| {
            std::iter::once(t.to_string())
                .chain(row.iter().map(f64::to_string))
                .collect()
        })
        .collect();
    (header, rows)
}

pub fn read_csv(path: &Path) -> Result<Tensor> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let skip = usize::from(header.get(0).map(str::trim) == Some("t"));
    let k = header.len() - skip;
    if k == 0 {
        return Err(bad("no value columns".into()));
    }
    let mut data = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(bad(format!("row {} has {} fields", line + 1, rec.len())));
        }
        for field in rec.iter().skip(skip) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("row {}: `{field}` is not a number", line + 1)))?;
            if !v.is_finite() {
                return Err(bad(format!("row {}: non-finite value", line + 1)));
            }
            data.push(v);
        }
    }
    let n = data.len() / k;
    Ok(Tensor::new(vec![n, k], data)?)
}
