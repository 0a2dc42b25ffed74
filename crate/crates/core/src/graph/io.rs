use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Reads whitespace-separated `u v` pairs, one per line. Blank lines and `#` comments are skipped.
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            let tok = tok.ok_or_else(|| parse_err(path, k + 1, "expected two node indices"))?;
            tok.parse().map_err(|_| parse_err(path, k + 1, format!("bad node index {tok:?}")))
        };
        let u = parse(it.next())?;
        let v = parse(it.next())?;
        if it.next().is_some() {
            return Err(parse_err(path, k + 1, "expected exactly two node indices"));
        }
        out.push((u, v));
    }
    Ok(out)
}

fn read_csv_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = read(path)?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| (k + 1, l.split(',').map(|c| c.trim().to_string()).collect()))
        .collect())
}

fn read_features(path: &Path) -> Result<Tensor> {
    let rows = read_csv_rows(path)?;
    let width = rows.first().map_or(0, |r| r.1.len());
    let mut data = Vec::with_capacity(rows.len() * width);
    for (line, cells) in &rows {
        if cells.len() != width {
            return Err(parse_err(path, *line, format!("expected {width} columns, found {}", cells.len())));
        }
        for c in cells {
            let v: f64 = c.parse().map_err(|_| parse_err(path, *line, format!("bad number {c:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, *line, "non-finite feature"));
            }
            data.push(v);
        }
    }
    Tensor::matrix(rows.len(), width, data)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_csv_rows(path)?
        .into_iter()
        .map(|(line, cells)| {
            if cells.len() != 1 {
                return Err(parse_err(path, line, "expected one label per row"));
            }
            cells[0].parse().map_err(|_| parse_err(path, line, format!("bad label {:?}", cells[0])))
        })
        .collect()
}

/// Loads a graph from an edge list and headerless feature / label CSVs (row `i` = node `i`).
pub fn load_graph(edge_file: &Path, feature_file: &Path, label_file: &Path) -> Result<Graph> {
    let features = read_features(feature_file)?;
    let labels = read_labels(label_file)?;
    if features.rows() != labels.len() {
        return Err(Error::shape(
            "load_graph",
            format!("{} feature rows but {} label rows", features.rows(), labels.len()),
        ));
    }
    let edges = read_edge_list(edge_file)?;
    Graph::new(features, labels, &edges)
}

/// Writes each undirected edge of a symmetrized list once, as `i j` with `i < j`.
pub fn write_edge_list(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let mut s = String::new();
    for &(i, j) in edges.iter().filter(|e| e.0 < e.1) {
        let _ = writeln!(s, "{i} {j}");
    }
    write_text(path, s)
}

pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    let mut s = String::new();
    for i in 0..features.rows() {
        let row: Vec<String> = features.row(i).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    write_text(path, s)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::new();
    for y in labels {
        let _ = writeln!(s, "{y}");
    }
    write_text(path, s)
}

pub fn write_text(path: &Path, contents: String) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
