//! Dataset directories:
//!
//! ```text
//! features.tsv   n rows of d tab-separated reals
//! edges.tsv      one `i<TAB>j` pair per line, 0-based
//! labels.tsv     one class id per line
//! splits.json    {"train_classes":[..],"val_classes":[..],"test_classes":[..]}
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::episodes::ClassSplit;
use crate::error::{Result, StarError};
use crate::graph::Graph;
use crate::matrix::Matrix;

pub const FEATURES_FILE: &str = "features.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLITS_FILE: &str = "splits.json";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| StarError::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn field<T: FromStr>(path: &Path, line: usize, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse().map_err(|e| StarError::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse `{raw}`: {e}"),
    })
}

fn parse_features(path: &Path) -> Result<Matrix> {
    let text = read(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (no, line) in lines(&text) {
        let before = data.len();
        for raw in line.split('\t') {
            data.push(field::<f64>(path, no, raw)?);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(StarError::Parse {
                    path: path.to_path_buf(),
                    line: no,
                    msg: format!("expected {c} columns, found {width}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| StarError::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "no feature rows".into(),
    })?;
    if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
        return Err(StarError::Parse {
            path: path.to_path_buf(),
            line: bad / cols + 1,
            msg: "non-finite feature value".into(),
        });
    }
    Matrix::from_vec(rows, cols, data)
}

fn parse_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    let mut self_loops = 0usize;
    for (no, line) in lines(&text) {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 2 {
            return Err(StarError::Parse {
                path: path.to_path_buf(),
                line: no,
                msg: format!("expected `i<TAB>j`, found {} fields", parts.len()),
            });
        }
        let a: usize = field(path, no, parts[0])?;
        let b: usize = field(path, no, parts[1])?;
        if a >= n || b >= n {
            return Err(StarError::Parse {
                path: path.to_path_buf(),
                line: no,
                msg: format!("node id out of range for {n} nodes"),
            });
        }
        if a == b {
            self_loops += 1;
        } else {
            edges.push((a, b));
        }
    }
    if self_loops > 0 {
        log::warn!("{}: skipped {self_loops} self-loop(s)", path.display());
    }
    Ok(edges)
}

fn parse_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = read(path)?;
    let labels = lines(&text)
        .map(|(no, line)| field(path, no, line))
        .collect::<Result<Vec<usize>>>()?;
    if labels.len() != n {
        return Err(StarError::Parse {
            path: path.to_path_buf(),
            line: labels.len(),
            msg: format!("{} labels for {n} feature rows", labels.len()),
        });
    }
    Ok(labels)
}

pub fn load_split(path: &Path) -> Result<ClassSplit> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|source| StarError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Graph, ClassSplit)> {
    let dir = dir.as_ref();
    let features = parse_features(&dir.join(FEATURES_FILE))?;
    let n = features.rows();
    let edges = parse_edges(&dir.join(EDGES_FILE), n)?;
    let labels = parse_labels(&dir.join(LABELS_FILE), n)?;
    let split = load_split(&dir.join(SPLITS_FILE))?;
    split.validate(&labels)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let g = Graph::new(name, features, edges, Some(labels))?;
    Ok((g, split))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| StarError::io(path, e))
}

/// Writes `g` and `split` as a dataset directory. Reals are written in
/// shortest round-trip form, so loading gives back identical bits.
pub fn save_dataset(dir: impl AsRef<Path>, g: &Graph, split: &ClassSplit) -> Result<()> {
    let dir = dir.as_ref();
    let labels = g
        .labels()
        .ok_or(StarError::MissingLabels("saving a dataset"))?;
    fs::create_dir_all(dir).map_err(|e| StarError::io(dir, e))?;

    let mut out = String::new();
    for row in g.features().row_iter() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push('\t');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    write(&dir.join(FEATURES_FILE), &out)?;

    out.clear();
    for (a, b) in g.edges() {
        writeln!(out, "{a}\t{b}").unwrap();
    }
    write(&dir.join(EDGES_FILE), &out)?;

    out.clear();
    for l in labels {
        writeln!(out, "{l}").unwrap();
    }
    write(&dir.join(LABELS_FILE), &out)?;

    let json = serde_json::to_string_pretty(split).expect("split serializes");
    write(&dir.join(SPLITS_FILE), &json)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_dir(features: &str, edges: &str, labels: &str, splits: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(FEATURES_FILE), features).unwrap();
        fs::write(dir.path().join(EDGES_FILE), edges).unwrap();
        fs::write(dir.path().join(LABELS_FILE), labels).unwrap();
        fs::write(dir.path().join(SPLITS_FILE), splits).unwrap();
        dir
    }

    const SPLIT: &str = r#"{"train_classes":[0],"val_classes":[],"test_classes":[1]}"#;

    #[test]
    fn two_node_round_trip_is_bit_exact() {
        let x = Matrix::from_rows(&[[0.1, 1.0 / 3.0], [-2.5e-300, 7.0]]).unwrap();
        let g = Graph::new("g", x, [(0, 1)], Some(vec![0, 1])).unwrap();
        let split: ClassSplit = serde_json::from_str(SPLIT).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &g, &split).unwrap();
        let (back, s2) = load_dataset(dir.path()).unwrap();
        assert_eq!(back.features(), g.features());
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.labels(), g.labels());
        assert_eq!(s2, split);
    }

    #[test]
    fn duplicate_reversed_edges_and_self_loops() {
        let dir = write_dir("1\t0\n0\t1\n", "0\t1\n1\t0\n1\t1\n", "0\n1\n", SPLIT);
        let (g, _) = load_dataset(dir.path()).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn corrupt_rows_name_file_and_line() {
        let dir = write_dir("1\t0\n0\tx\n", "0\t1\n", "0\n1\n", SPLIT);
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("features.tsv:2"), "{err}");

        let dir = write_dir("1\t0\n0\n", "0\t1\n", "0\n1\n", SPLIT);
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(
            err.contains("features.tsv:2") && err.contains("columns"),
            "{err}"
        );

        let dir = write_dir("1\t0\n0\t1\n", "0\t1\n0\t5\n", "0\n1\n", SPLIT);
        assert!(load_dataset(dir.path())
            .unwrap_err()
            .to_string()
            .contains("edges.tsv:2"));

        let dir = write_dir("1\t0\n0\t1\n", "0\t1\n", "0\n", SPLIT);
        assert!(load_dataset(dir.path())
            .unwrap_err()
            .to_string()
            .contains("labels.tsv"));
    }

    #[test]
    fn unknown_split_class_and_missing_file() {
        let dir = write_dir(
            "1\t0\n0\t1\n",
            "0\t1\n",
            "0\n1\n",
            r#"{"train_classes":[],"val_classes":[],"test_classes":[4]}"#,
        );
        assert!(load_dataset(dir.path()).is_err());
        fs::remove_file(dir.path().join(EDGES_FILE)).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, StarError::Io { .. }));
    }
}
