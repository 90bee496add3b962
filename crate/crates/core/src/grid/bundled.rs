//! Standard IEEE test grids shipped with the crate.
//!
//! Reactances come from the public 14/30/57/118-bus test cases. Parallel
//! circuits between one bus pair are merged into a single equivalent line
//! (susceptances add), and out-of-service branches are dropped. Each grid
//! carries a uniform `sigma` equal to the standard deviation of the case's
//! original net injections (per unit on the case base), used for type II
//! data.

use super::GridTopology;

const IEEE14: &str = include_str!("../../data/grids/ieee14.json");
const IEEE30: &str = include_str!("../../data/grids/ieee30.json");
const IEEE57: &str = include_str!("../../data/grids/ieee57.json");
const IEEE118: &str = include_str!("../../data/grids/ieee118.json");

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 4] = ["ieee14", "ieee30", "ieee57", "ieee118"];

pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "ieee14" => Some(IEEE14),
        "ieee30" => Some(IEEE30),
        "ieee57" => Some(IEEE57),
        "ieee118" => Some(IEEE118),
        _ => None,
    }
}

pub fn by_name(name: &str) -> Option<GridTopology> {
    source(name).map(|s| GridTopology::from_json_str(s).expect("bundled grid is valid"))
}

pub fn ieee14() -> GridTopology {
    by_name("ieee14").unwrap()
}

pub fn ieee30() -> GridTopology {
    by_name("ieee30").unwrap()
}

pub fn ieee57() -> GridTopology {
    by_name("ieee57").unwrap()
}

pub fn ieee118() -> GridTopology {
    by_name("ieee118").unwrap()
}

/// All bundled grids in increasing size.
pub fn all() -> Vec<(&'static str, GridTopology)> {
    NAMES.iter().map(|&n| (n, by_name(n).unwrap())).collect()
}
