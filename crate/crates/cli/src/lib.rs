//! Experiment harness and command-line plumbing around `gridrecon-core`.

pub mod experiment;
pub mod scenario;

use std::path::Path;

use anyhow::{Context, Result};
use gridrecon_core::grid::{bundled, load_grid};
use gridrecon_core::GridTopology;

/// Resolve `--grid`: a bundled grid name (`ieee14`, `ieee30`, `ieee57`,
/// `ieee118`) or a path to a grid file.
pub fn resolve_grid(spec: &str) -> Result<GridTopology> {
    if let Some(g) = bundled::by_name(spec) {
        return Ok(g);
    }
    load_grid(Path::new(spec)).with_context(|| format!("loading grid {spec}"))
}
