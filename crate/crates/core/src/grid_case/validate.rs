use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{BusKind, GridCase};

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Offending entity, e.g. `bus 3` or `branch 12`.
    pub entity: String,
    pub rule: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

fn diag(out: &mut Vec<Diagnostic>, entity: impl Into<String>, rule: impl Into<String>) {
    out.push(Diagnostic {
        entity: entity.into(),
        rule: rule.into(),
    });
}

/// Check every structural invariant of a case. An empty list means the case is valid.
pub fn validate(case: &GridCase) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    if !(case.base_mva > 0.0 && case.base_mva.is_finite()) {
        diag(&mut out, "case", "base_mva must be positive and finite");
    }

    let mut bus_ids = HashSet::new();
    for b in &case.buses {
        let who = format!("bus {}", b.id);
        if !bus_ids.insert(b.id) {
            diag(&mut out, &who, "duplicate bus id");
        }
        if !(b.v_min > 0.0 && b.v_min < b.v_max && b.v_max.is_finite()) {
            diag(&mut out, &who, "voltage limits must satisfy 0 < v_min < v_max");
        }
        if !(b.v_set > 0.0 && b.v_set.is_finite()) {
            diag(&mut out, &who, "voltage setpoint must be positive");
        }
        if ![b.load_p, b.load_q, b.gen_p, b.gs, b.bs, b.nominal_kv]
            .iter()
            .all(|v| v.is_finite())
        {
            diag(&mut out, &who, "non-finite injection or shunt");
        }
    }
    match case.slack_count() {
        0 => diag(&mut out, "case", "missing slack bus"),
        1 => {}
        _ => diag(&mut out, "case", "multiple slack buses"),
    }

    let mut branch_ids = HashSet::new();
    let mut endpoints_ok = true;
    for br in &case.branches {
        let who = format!("branch {}", br.id);
        if !branch_ids.insert(br.id) {
            diag(&mut out, &who, "duplicate branch id");
        }
        for end in [br.from_bus, br.to_bus] {
            if !bus_ids.contains(&end) {
                diag(&mut out, &who, format!("unknown bus {end}"));
                endpoints_ok = false;
            }
        }
        if br.from_bus == br.to_bus {
            diag(&mut out, &who, "branch connects a bus to itself");
        }
        if !(br.r.is_finite() && br.x.is_finite() && br.b_shunt.is_finite()) {
            diag(&mut out, &who, "impedance must be finite");
        } else {
            if br.x == 0.0 {
                diag(&mut out, &who, "reactance must be non-zero");
            }
            if br.r < 0.0 {
                diag(&mut out, &who, "resistance must be non-negative");
            }
        }
        if !(br.flow_max > 0.0) {
            diag(&mut out, &who, "flow limit must be positive");
        }
        if let Some(t) = &br.tap {
            if t.n_positions < 2 {
                diag(&mut out, &who, "tap lattice needs at least 2 positions");
            }
            if !(t.ratio_min > 0.0 && t.ratio_min < t.ratio_max && t.ratio_max.is_finite()) {
                diag(&mut out, &who, "tap ratios must satisfy 0 < ratio_min < ratio_max");
            }
            if t.initial >= t.n_positions {
                diag(&mut out, &who, "initial tap index outside the lattice");
            }
        }
    }

    let mut unit_ids = HashSet::new();
    for u in &case.units {
        let who = format!("unit {}", u.id);
        if !unit_ids.insert(u.id) {
            diag(&mut out, &who, "duplicate unit id");
        }
        if !bus_ids.contains(&u.bus) {
            diag(&mut out, &who, format!("unknown bus {}", u.bus));
        }
        if !(u.q_min <= 0.0 && 0.0 <= u.q_max && u.q_min.is_finite() && u.q_max.is_finite()) {
            diag(&mut out, &who, "reactive limits must satisfy q_min <= 0 <= q_max");
        }
        if !(u.p_rating > 0.0 && u.p_rating.is_finite()) {
            diag(&mut out, &who, "active power rating must be positive");
        }
    }

    let mut controlled = HashSet::new();
    for lt in &case.local_taps {
        let who = format!("local tap on branch {}", lt.branch);
        if !controlled.insert(lt.branch) {
            diag(&mut out, &who, "branch has more than one local controller");
        }
        match case.branches.iter().find(|b| b.id == lt.branch) {
            None => diag(&mut out, &who, format!("unknown branch {}", lt.branch)),
            Some(br) => {
                match &br.tap {
                    None => diag(&mut out, &who, "branch has no tap changer"),
                    Some(t) if t.controllable => {
                        diag(&mut out, &who, "tap is already owned by the central controller")
                    }
                    Some(_) => {}
                }
                if lt.monitored_bus != br.from_bus && lt.monitored_bus != br.to_bus {
                    diag(&mut out, &who, "monitored bus is not a branch endpoint");
                }
            }
        }
        if !(lt.deadband_low < lt.deadband_high) {
            diag(&mut out, &who, "deadband must satisfy low < high");
        }
    }

    if endpoints_ok && case.slack_count() >= 1 {
        for id in unreachable_buses(case) {
            diag(&mut out, format!("bus {id}"), "not connected to the slack bus");
        }
    }
    out
}

fn unreachable_buses(case: &GridCase) -> Vec<usize> {
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for br in &case.branches {
        adj.entry(br.from_bus).or_default().push(br.to_bus);
        adj.entry(br.to_bus).or_default().push(br.from_bus);
    }
    let mut seen: HashSet<usize> = case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .map(|b| b.id)
        .collect();
    let mut stack: Vec<usize> = seen.iter().copied().collect();
    while let Some(b) = stack.pop() {
        for &n in adj.get(&b).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(n) {
                stack.push(n);
            }
        }
    }
    case.buses
        .iter()
        .filter(|b| !seen.contains(&b.id))
        .map(|b| b.id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid_case::{parse_case, BusKind, GridCase};

    fn three_bus() -> GridCase {
        parse_case(fixtures::THREE_BUS).unwrap()
    }

    #[test]
    fn valid_case_has_no_diagnostics() {
        assert!(validate(&three_bus()).is_empty());
        assert!(validate(&parse_case(fixtures::MINI_BLOCAUX).unwrap()).is_empty());
    }

    #[test]
    fn inverted_voltage_limits_flag_that_bus() {
        let mut case = three_bus();
        case.buses[1].v_min = 1.1;
        case.buses[1].v_max = 0.9;
        let d = validate(&case);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].entity, format!("bus {}", case.buses[1].id));
    }

    #[test]
    fn two_slacks_flagged_once() {
        let mut case = three_bus();
        case.buses[2].kind = BusKind::Slack;
        let d = validate(&case);
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(d[0].rule.contains("multiple slack"));
    }

    #[test]
    fn missing_slack_flagged() {
        let mut case = three_bus();
        for b in &mut case.buses {
            b.kind = BusKind::Pq;
        }
        let d = validate(&case);
        assert_eq!(d.len(), 1);
        assert!(d[0].rule.contains("missing slack"));
    }

    #[test]
    fn isolated_bus_flagged() {
        let mut case = three_bus();
        case.branches.pop();
        let d = validate(&case);
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(d[0].rule.contains("not connected"));
    }

    /// Every single-field mutation that breaks an invariant yields a diagnostic.
    #[test]
    fn single_field_mutations_are_detected() {
        let base = parse_case(fixtures::MINI_BLOCAUX).unwrap();
        type Mutation = fn(&mut GridCase);
        let mutations: Vec<(&str, Mutation)> = vec![
            ("base_mva", |c| c.base_mva = 0.0),
            ("v_min<=0", |c| c.buses[2].v_min = 0.0),
            ("v_min>=v_max", |c| c.buses[2].v_min = c.buses[2].v_max),
            ("v_set", |c| c.buses[0].v_set = -1.0),
            ("load nan", |c| c.buses[3].load_p = f64::NAN),
            ("dup bus", |c| c.buses[1].id = c.buses[0].id),
            ("dangling from", |c| c.branches[0].from_bus = 999),
            ("x zero", |c| c.branches[1].x = 0.0),
            ("r negative", |c| c.branches[1].r = -0.1),
            ("r inf", |c| c.branches[1].r = f64::INFINITY),
            ("flow_max", |c| c.branches[2].flow_max = 0.0),
            ("tap positions", |c| {
                c.branches.iter_mut().find(|b| b.tap.is_some()).unwrap().tap.as_mut().unwrap().n_positions = 1
            }),
            ("tap ratios", |c| {
                let t = c.branches.iter_mut().find(|b| b.tap.is_some()).unwrap().tap.as_mut().unwrap();
                t.ratio_min = t.ratio_max;
            }),
            ("tap initial", |c| {
                c.branches.iter_mut().find(|b| b.tap.is_some()).unwrap().tap.as_mut().unwrap().initial = 40
            }),
            ("unit bus", |c| c.units[0].bus = 999),
            ("unit q_min", |c| c.units[0].q_min = 0.1),
            ("unit q_max", |c| c.units[0].q_max = -0.1),
            ("unit rating", |c| c.units[0].p_rating = 0.0),
            ("dup unit", |c| c.units[1].id = c.units[0].id),
            ("deadband", |c| c.local_taps[0].deadband_low = c.local_taps[0].deadband_high),
            ("monitored bus", |c| c.local_taps[0].monitored_bus = 999),
            ("local branch", |c| c.local_taps[0].branch = 999),
            ("slack", |c| c.buses[0].kind = BusKind::Pq),
        ];
        assert!(validate(&base).is_empty());
        for (name, m) in mutations {
            let mut c = base.clone();
            m(&mut c);
            assert!(!validate(&c).is_empty(), "mutation '{name}' not detected");
        }
    }
}
