//! Bundled case files.

pub const TWO_BUS: &str = include_str!("../data/two_bus.case");
pub const THREE_BUS: &str = include_str!("../data/three_bus.case");
pub const MINI_BLOCAUX: &str = include_str!("../data/mini_blocaux.case");

/// Look up a bundled case by name (`two-bus`, `three-bus`, `mini-blocaux`).
pub fn builtin_case(name: &str) -> Option<&'static str> {
    match name {
        "two-bus" => Some(TWO_BUS),
        "three-bus" => Some(THREE_BUS),
        "mini-blocaux" => Some(MINI_BLOCAUX),
        _ => None,
    }
}
