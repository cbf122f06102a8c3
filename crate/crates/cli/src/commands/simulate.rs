use serde::Serialize;

use super::{per_seed, Context};
use crate::config::DataSource;
use crate::data::{self, create_dir, file_sha256, series_csv_rows, write_csv, write_json, Dataset};
use crate::error::{CliError, Result};

#[derive(Serialize)]
struct Written {
    file: String,
    shape: Vec<usize>,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    source: &'a DataSource,
    seed: u64,
    files: Vec<Written>,
}

/// Writes one dataset per seed: `series.csv`, or `inputs.atns` and
/// `targets.atns` for video, plus a manifest with checksums.
pub fn run(ctx: &Context) -> Result<()> {
    let source = ctx.cfg.data()?;
    if !matches!(source, DataSource::Dgp { .. } | DataSource::Video { .. }) {
        return Err(CliError::Config(
            "simulate needs a generated source (dgp or video)".into(),
        ));
    }
    per_seed(ctx, |seed| {
        let dir = ctx.seed_dir(seed);
        create_dir(&dir)?;
        let mut files = Vec::new();
        let mut record = |name: &str, shape: &[usize]| -> Result<()> {
            files.push(Written {
                file: name.to_string(),
                shape: shape.to_vec(),
                sha256: file_sha256(&dir.join(name))?,
            });
            Ok(())
        };
        match data::load(source, seed)? {
            Dataset::Series(x) => {
                let (header, rows) = series_csv_rows(&x);
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                write_csv(&dir.join("series.csv"), &header, &rows)?;
                record("series.csv", x.shape())?;
            }
            Dataset::Frames { inputs, targets } => {
                data::write_tensor(&dir.join("inputs.atns"), &inputs)?;
                data::write_tensor(&dir.join("targets.atns"), &targets)?;
                record("inputs.atns", inputs.shape())?;
                record("targets.atns", targets.shape())?;
            }
        }
        write_json(
            &dir.join("manifest.json"),
            &Manifest {
                source,
                seed,
                files,
            },
        )
    })?;
    Ok(())
}
