//! Static grid description: buses, branches, controllable units and tap changers.
//!
//! Every electrical quantity stored here is per-unit on [`GridCase::base_mva`].
//! Conversion from physical units happens only in the importers.

mod format;
mod matpower;
mod validate;

pub use format::{parse_case, parse_case_unvalidated, serialize_case};
pub use matpower::parse_matpower;
pub use validate::{validate, Diagnostic};

use thiserror::Error;

/// Default number of tap positions on an on-load tap changer.
pub const DEFAULT_TAP_POSITIONS: usize = 33;
pub const DEFAULT_RATIO_MIN: f64 = 0.9;
pub const DEFAULT_RATIO_MAX: f64 = 1.1;
/// Half-width of the default local tap-changer deadband around 1.0 p.u.
pub const DEFAULT_DEADBAND: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid case: {0}")]
    Semantic(String),
    #[error("tap index {index} out of range 0..={max}")]
    TapIndexOutOfRange { index: i64, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

impl BusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BusKind::Slack => "slack",
            BusKind::Pv => "pv",
            BusKind::Pq => "pq",
        }
    }
}

impl std::str::FromStr for BusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "slack" | "ref" => Ok(BusKind::Slack),
            "pv" => Ok(BusKind::Pv),
            "pq" => Ok(BusKind::Pq),
            other => Err(format!("unknown bus kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub v_min: f64,
    pub v_max: f64,
    pub nominal_kv: f64,
    /// Voltage magnitude setpoint for slack and PV buses.
    pub v_set: f64,
    /// Default consumption and uncontrolled generation (the disturbance `d`).
    pub load_p: f64,
    pub load_q: f64,
    pub gen_p: f64,
    /// Shunt admittance to ground.
    pub gs: f64,
    pub bs: f64,
}

impl Bus {
    pub fn new(id: usize, kind: BusKind) -> Self {
        Bus {
            id,
            kind,
            v_min: 0.9,
            v_max: 1.1,
            nominal_kv: 1.0,
            v_set: 1.0,
            load_p: 0.0,
            load_q: 0.0,
            gen_p: 0.0,
            gs: 0.0,
            bs: 0.0,
        }
    }
}

/// Discrete tap lattice of an on-load tap changer sitting on the from-side of a branch.
#[derive(Debug, Clone, PartialEq)]
pub struct TapSpec {
    pub n_positions: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Driven by the central controller rather than held fixed or switched locally.
    pub controllable: bool,
    /// Starting position for taps the controller does not own.
    pub initial: usize,
}

impl Default for TapSpec {
    fn default() -> Self {
        TapSpec {
            n_positions: DEFAULT_TAP_POSITIONS,
            ratio_min: DEFAULT_RATIO_MIN,
            ratio_max: DEFAULT_RATIO_MAX,
            controllable: false,
            initial: DEFAULT_TAP_POSITIONS / 2,
        }
    }
}

impl TapSpec {
    pub fn controllable() -> Self {
        TapSpec {
            controllable: true,
            ..TapSpec::default()
        }
    }

    pub fn max_index(&self) -> usize {
        self.n_positions - 1
    }

    /// Index of the lattice midpoint (ratio 1.0 for the default lattice).
    pub fn neutral_index(&self) -> usize {
        (self.n_positions - 1) / 2
    }

    pub fn ratio(&self, index: usize) -> Result<f64, CaseError> {
        tap_index_to_ratio(self, index as i64)
    }

    /// Nearest lattice index to a continuous ratio, clamped to the lattice.
    pub fn nearest_index(&self, ratio: f64) -> usize {
        let span = self.ratio_max - self.ratio_min;
        let t = ((ratio - self.ratio_min) / span * self.max_index() as f64).round();
        t.clamp(0.0, self.max_index() as f64) as usize
    }
}

/// Map a tap index onto its winding ratio.
///
/// Positions are equally spaced and the endpoints are reproduced exactly.
pub fn tap_index_to_ratio(spec: &TapSpec, index: i64) -> Result<f64, CaseError> {
    let max = spec.n_positions.saturating_sub(1);
    if index < 0 || index as usize > max || max == 0 {
        return Err(CaseError::TapIndexOutOfRange { index, max });
    }
    let t = index as f64 / max as f64;
    Ok(spec.ratio_min * (1.0 - t) + spec.ratio_max * t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    pub b_shunt: f64,
    /// Apparent-power limit.
    pub flow_max: f64,
    pub tap: Option<TapSpec>,
}

impl Branch {
    pub fn line(id: usize, from_bus: usize, to_bus: usize, r: f64, x: f64) -> Self {
        Branch {
            id,
            from_bus,
            to_bus,
            r,
            x,
            b_shunt: 0.0,
            flow_max: f64::INFINITY,
            tap: None,
        }
    }
}

/// A wind farm (or similar inverter-based unit) that accepts P and Q setpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllableUnit {
    pub id: usize,
    pub bus: usize,
    pub q_min: f64,
    pub q_max: f64,
    pub p_rating: f64,
}

/// An autonomous tap changer keeping one bus voltage inside a deadband.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTapController {
    pub branch: usize,
    pub monitored_bus: usize,
    pub deadband_low: f64,
    pub deadband_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub units: Vec<ControllableUnit>,
    pub local_taps: Vec<LocalTapController>,
}

impl GridCase {
    /// Position of a bus id in `buses`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn branch_index(&self, id: usize) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    /// Branch positions carrying a controllable tap, in branch order.
    pub fn controllable_taps(&self) -> Vec<usize> {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.tap.as_ref().is_some_and(|t| t.controllable))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_controllable_taps(&self) -> usize {
        self.controllable_taps().len()
    }

    /// Input dimension `[q; p; tap]`.
    pub fn n_inputs(&self) -> usize {
        2 * self.units.len() + self.n_controllable_taps()
    }

    /// Output dimension `[v; l]`.
    pub fn n_outputs(&self) -> usize {
        self.buses.len() + self.branches.len()
    }

    /// Branch positions for every local tap controller, in controller order.
    pub fn local_tap_branches(&self) -> Result<Vec<usize>, CaseError> {
        self.local_taps
            .iter()
            .map(|lt| {
                self.branch_index(lt.branch).ok_or_else(|| {
                    CaseError::Semantic(format!(
                        "local tap controller references unknown branch {}",
                        lt.branch
                    ))
                })
            })
            .collect()
    }

    pub fn slack_count(&self) -> usize {
        self.buses.iter().filter(|b| b.kind == BusKind::Slack).count()
    }

    /// Input names in `[q; p; tap]` order, for CSV headers.
    pub fn input_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.units.iter().map(|u| format!("q_{}", u.id)).collect();
        names.extend(self.units.iter().map(|u| format!("p_{}", u.id)));
        names.extend(
            self.controllable_taps()
                .into_iter()
                .map(|i| format!("tap_{}", self.branches[i].id)),
        );
        names
    }

    /// Output names in `[v; l]` order.
    pub fn output_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.buses.iter().map(|b| format!("v_{}", b.id)).collect();
        names.extend(self.branches.iter().map(|b| format!("l_{}", b.id)));
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lattice_endpoints_and_midpoint() {
        let spec = TapSpec::default();
        assert_eq!(tap_index_to_ratio(&spec, 0).unwrap(), 0.9);
        assert_eq!(tap_index_to_ratio(&spec, 32).unwrap(), 1.1);
        assert!((tap_index_to_ratio(&spec, 16).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lattice_step_is_uniform() {
        let spec = TapSpec::default();
        for k in 0..32 {
            let d = spec.ratio(k + 1).unwrap() - spec.ratio(k).unwrap();
            assert!((d - 0.2 / 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_index_rejected() {
        let spec = TapSpec::default();
        assert!(matches!(
            tap_index_to_ratio(&spec, 33),
            Err(CaseError::TapIndexOutOfRange { index: 33, max: 32 })
        ));
        assert!(tap_index_to_ratio(&spec, -1).is_err());
    }

    #[test]
    fn nearest_index_round_trips_lattice() {
        let spec = TapSpec::default();
        for k in 0..33 {
            assert_eq!(spec.nearest_index(spec.ratio(k).unwrap()), k);
        }
        assert_eq!(spec.nearest_index(2.0), 32);
        assert_eq!(spec.nearest_index(0.0), 0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ratio_strictly_increasing(
                n in 2usize..80,
                lo in 0.5f64..1.0,
                span in 0.01f64..0.5,
            ) {
                let spec = TapSpec { n_positions: n, ratio_min: lo, ratio_max: lo + span, controllable: true, initial: 0 };
                prop_assert_eq!(spec.ratio(0).unwrap(), spec.ratio_min);
                prop_assert_eq!(spec.ratio(n - 1).unwrap(), spec.ratio_max);
                for k in 0..n - 1 {
                    prop_assert!(spec.ratio(k + 1).unwrap() > spec.ratio(k).unwrap());
                }
            }
        }
    }
}
