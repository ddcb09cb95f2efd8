//! Metrics and embedding files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, StarError};
use crate::matrix::Matrix;
use crate::nn::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::pipeline::Metrics;

/// Tensor name of the embedding matrix in binary embedding files.
pub const EMBEDDING_TENSOR: &str = "Z";

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| StarError::io(path, e))
}

/// `metrics.json` becomes `metrics.episodes.csv`.
pub fn episodes_csv_path(metrics_path: &Path) -> PathBuf {
    let stem = metrics_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "metrics".into());
    metrics_path.with_file_name(format!("{stem}.episodes.csv"))
}

/// Writes the metrics JSON and the per-episode CSV next to it.
pub fn export_results(metrics: &Metrics, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    write(path, &json)?;
    let mut csv = String::from("repetition,episode,accuracy,ot_iterations,ot_converged\n");
    for r in &metrics.per_episode {
        writeln!(
            csv,
            "{},{},{},{},{}",
            r.repetition, r.episode, r.accuracy, r.ot_iterations, r.ot_converged
        )
        .unwrap();
    }
    write(&episodes_csv_path(path), &csv)
}

/// Reads `metrics.json`. Per-episode rows live in the CSV and are not loaded.
pub fn read_results(path: impl AsRef<Path>) -> Result<Metrics> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| StarError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| StarError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    /// Tensor file with the matrix under [`EMBEDDING_TENSOR`].
    Binary,
    /// Tab-separated rows; metadata goes to a `.json` sidecar.
    Tsv,
}

impl EmbeddingFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => EmbeddingFormat::Tsv,
            _ => EmbeddingFormat::Binary,
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn export_embeddings(
    z: &Matrix,
    metadata: &serde_json::Value,
    path: impl AsRef<Path>,
    format: EmbeddingFormat,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        EmbeddingFormat::Binary => write_checkpoint(
            path,
            &Checkpoint {
                tensors: vec![(EMBEDDING_TENSOR.into(), z.clone())],
                metadata: metadata.clone(),
            },
        ),
        EmbeddingFormat::Tsv => {
            let mut out = String::new();
            for row in z.row_iter() {
                for (i, v) in row.iter().enumerate() {
                    if i > 0 {
                        out.push('\t');
                    }
                    write!(out, "{v}").unwrap();
                }
                out.push('\n');
            }
            write(path, &out)?;
            write(
                &sidecar(path),
                &serde_json::to_string_pretty(metadata).expect("json"),
            )
        }
    }
}

/// Embedding matrix and metadata (`Null` when a TSV has no sidecar).
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(Matrix, serde_json::Value)> {
    let path = path.as_ref();
    match EmbeddingFormat::from_path(path) {
        EmbeddingFormat::Binary => {
            let ckpt = read_checkpoint(path)?;
            Ok((ckpt.require(EMBEDDING_TENSOR)?.clone(), ckpt.metadata))
        }
        EmbeddingFormat::Tsv => {
            let text = fs::read_to_string(path).map_err(|e| StarError::io(path, e))?;
            let mut rows = Vec::new();
            for (i, line) in text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
            {
                let row = line
                    .split('\t')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|e| StarError::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: e.to_string(),
                    })?;
                rows.push(row);
            }
            let z = Matrix::from_rows(&rows).map_err(|_| StarError::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "ragged rows".into(),
            })?;
            let side = sidecar(path);
            let meta = match fs::read_to_string(&side) {
                Ok(t) => serde_json::from_str(&t)
                    .map_err(|source| StarError::Json { path: side, source })?,
                Err(_) => serde_json::Value::Null,
            };
            Ok((z, meta))
        }
    }
}
