//! Parameters as one CSV per tensor plus a JSON manifest; embeddings as a single CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};
use crate::graph::write_text;
use crate::tensor::Tensor;

const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

fn tensor_csv(t: &Tensor) -> String {
    let width = match t.shape() {
        [] => 1,
        [n] => *n,
        s => s[1..].iter().product(),
    };
    let mut s = String::new();
    for chunk in t.data().chunks(width.max(1)) {
        let row: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

/// Writes `manifest.json` and `<index>_<name>.csv` files into `dir` (created if missing).
pub fn save_checkpoint(dir: &Path, params: &ParamStore) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut entries = Vec::with_capacity(params.len());
    for (i, (name, t)) in params.names.iter().zip(&params.tensors).enumerate() {
        let file = format!("{i:03}_{name}.csv");
        write_text(&dir.join(&file), tensor_csv(t))?;
        entries.push(Entry { name: name.clone(), shape: t.shape().to_vec(), file });
    }
    write_text(&dir.join(MANIFEST), serde_json::to_string_pretty(&entries)? + "\n")
}

pub fn load_checkpoint(dir: &Path) -> Result<ParamStore> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let entries: Vec<Entry> = serde_json::from_str(&text)?;
    let mut out = ParamStore::default();
    for e in entries {
        let p = dir.join(&e.file);
        let text = fs::read_to_string(&p).map_err(|err| Error::io(format!("reading {}", p.display()), err))?;
        let mut data = Vec::new();
        for (k, line) in text.lines().enumerate() {
            for cell in line.split(',').filter(|c| !c.trim().is_empty()) {
                let v = cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: p.clone(),
                    line: k + 1,
                    msg: format!("bad number {cell:?}"),
                })?;
                data.push(v);
            }
        }
        out.push(e.name, Tensor::new(e.shape, data)?);
    }
    Ok(out)
}

/// `node_id,label,e_0,…,e_{d−1}` with a header row.
pub fn write_embeddings(path: &Path, embeddings: &Tensor, labels: &[usize]) -> Result<()> {
    let d = embeddings.cols();
    let mut s = String::from("node_id,label");
    for j in 0..d {
        let _ = write!(s, ",e_{j}");
    }
    s.push('\n');
    for (i, y) in labels.iter().enumerate() {
        let _ = write!(s, "{i},{y}");
        for v in embeddings.row(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    write_text(path, s)
}
