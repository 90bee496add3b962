//! Grid file format.
//!
//! JSON object with keys in a fixed order: `n_buses`, `lines` (objects
//! `{from, to, x}` with 0-based bus indices), then the optional `labels` and
//! `sigma` arrays. Lines are written normalized (`from < to`) and sorted, one
//! per line, so the output is byte-stable.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{GridError, GridTopology, Line};
use crate::fmt::f64_str;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    n_buses: usize,
    lines: Vec<LineRecord>,
    #[serde(default)]
    labels: Option<Vec<String>>,
    #[serde(default)]
    sigma: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LineRecord {
    from: usize,
    to: usize,
    x: f64,
}

impl GridTopology {
    pub fn from_json_str(text: &str) -> Result<Self, GridError> {
        let file: GridFile = serde_json::from_str(text).map_err(|e| GridError::Malformed(e.to_string()))?;
        let lines = file.lines.into_iter().map(|l| Line::new(l.from, l.to, l.x)).collect();
        let mut grid = GridTopology::new(file.n_buses, lines)?;
        if let Some(labels) = file.labels {
            grid = grid.with_labels(labels)?;
        }
        if let Some(sigma) = file.sigma {
            grid = grid.with_sigma(sigma)?;
        }
        Ok(grid)
    }

    pub fn to_json_string(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        out.push_str(&format!("  \"n_buses\": {},\n", self.n_buses()));
        let lines = self.canonical_lines();
        if lines.is_empty() {
            out.push_str("  \"lines\": []");
        } else {
            out.push_str("  \"lines\": [\n");
            let body: Vec<String> = lines
                .iter()
                .map(|l| {
                    format!(
                        "    {{\"from\": {}, \"to\": {}, \"x\": {}}}",
                        l.from,
                        l.to,
                        f64_str(l.x)
                    )
                })
                .collect();
            out.push_str(&body.join(",\n"));
            out.push_str("\n  ]");
        }
        if let Some(labels) = self.labels() {
            let quoted: Vec<String> = labels
                .iter()
                .map(|s| serde_json::to_string(s).expect("string serialization"))
                .collect();
            out.push_str(&format!(",\n  \"labels\": [{}]", quoted.join(", ")));
        }
        if let Some(sigma) = self.sigma() {
            let vals: Vec<String> = sigma.iter().map(|v| f64_str(*v)).collect();
            out.push_str(&format!(",\n  \"sigma\": [{}]", vals.join(", ")));
        }
        out.push_str("\n}\n");
        out
    }
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<GridTopology, GridError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    GridTopology::from_json_str(&text)
}

pub fn save_grid(topology: &GridTopology, path: impl AsRef<Path>) -> Result<(), GridError> {
    let path = path.as_ref();
    fs::write(path, topology.to_json_string()).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })
}
