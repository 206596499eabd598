//! Bundled MATPOWER-format case data, compiled into the library so tests and
//! the CLI need no external files.

use crate::netmodel::{parse_matpower, Network};

pub const CASE33BW: &str = include_str!("../data/case33bw.m");
pub const CASE39: &str = include_str!("../data/case39.m");

/// Baran & Wu 33-bus radial distribution feeder.
pub fn ieee33() -> Network {
    parse_matpower(CASE33BW).expect("bundled case33bw parses")
}

/// New England 10-machine 39-bus system (meshed).
pub fn ieee39() -> Network {
    parse_matpower(CASE39).expect("bundled case39 parses")
}

/// Resolve a builtin case name, if known.
pub fn builtin(name: &str) -> Option<Network> {
    match name {
        "ieee33" | "case33bw" => Some(ieee33()),
        "ieee39" | "case39" => Some(ieee39()),
        _ => None,
    }
}
