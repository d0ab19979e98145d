//! Importer for the common public grid-case table layout (`mpc.bus`, `mpc.gen`,
//! `mpc.branch` matrices in physical units).
//!
//! Conventions:
//! - generators on PQ buses become controllable units (the wind-farm role),
//!   generators on PV and reference buses become fixed injections with their
//!   voltage setpoint;
//! - every branch with a non-zero ratio gets a fixed 33-position lattice of
//!   0.625 % steps centred on the case ratio;
//! - `rateA = 0` means unlimited, out-of-service rows are dropped.

use log::warn;

use super::{
    validate, Branch, Bus, BusKind, CaseError, ControllableUnit, GridCase, TapSpec,
    DEFAULT_TAP_POSITIONS,
};

const TAP_STEP: f64 = 0.2 / 32.0;

struct Matrix {
    rows: Vec<Vec<f64>>,
    line: usize,
}

fn strip_comment(line: &str) -> &str {
    line.split('%').next().unwrap_or("")
}

/// Collect `mpc.<name> = [ ... ];` matrices and `mpc.baseMVA = x;` scalars.
fn scan(text: &str) -> Result<(Option<f64>, Vec<(String, Matrix)>), CaseError> {
    let mut base = None;
    let mut mats = Vec::new();
    let mut current: Option<(String, Matrix)> = None;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if current.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else {
                continue;
            };
            let Some((name, value)) = rest.split_once('=') else {
                continue;
            };
            let name = name.trim().to_string();
            let value = value.trim();
            if let Some(body) = value.strip_prefix('[') {
                current = Some((name, Matrix { rows: Vec::new(), line: lineno }));
                line = body;
            } else {
                if name == "baseMVA" {
                    let v = value.trim_end_matches(';').trim();
                    base = Some(v.parse::<f64>().map_err(|_| CaseError::Syntax {
                        line: lineno,
                        column: raw.find(v).map(|c| c + 1).unwrap_or(1),
                        message: format!("bad baseMVA '{v}'"),
                    })?);
                }
                continue;
            }
        }
        let (name, mat) = current.as_mut().expect("inside a matrix");
        let (body, closed) = match line.find(']') {
            Some(pos) => (&line[..pos], true),
            None => (line, false),
        };
        for chunk in body.split(';') {
            let mut row = Vec::new();
            for tok in chunk.split(|c: char| c.is_whitespace() || c == ',') {
                if tok.is_empty() {
                    continue;
                }
                let v = tok.parse::<f64>().map_err(|_| CaseError::Syntax {
                    line: lineno,
                    column: raw.find(tok).map(|c| c + 1).unwrap_or(1),
                    message: format!("bad number '{tok}' in mpc.{name}"),
                })?;
                row.push(v);
            }
            if !row.is_empty() {
                mat.rows.push(row);
            }
        }
        if closed {
            mats.push(current.take().expect("matrix open"));
        }
    }
    if let Some((name, mat)) = current {
        return Err(CaseError::Syntax {
            line: mat.line,
            column: 1,
            message: format!("mpc.{name} is never closed"),
        });
    }
    Ok((base, mats))
}

fn require_cols(name: &str, mat: &Matrix, n: usize) -> Result<(), CaseError> {
    match mat.rows.iter().find(|r| r.len() < n) {
        Some(_) => Err(CaseError::Syntax {
            line: mat.line,
            column: 1,
            message: format!("mpc.{name} rows need at least {n} columns"),
        }),
        None => Ok(()),
    }
}

/// Import a case written in the public table layout and validate it.
pub fn parse_matpower(text: &str) -> Result<GridCase, CaseError> {
    let (base, mats) = scan(text)?;
    let base = base.ok_or_else(|| CaseError::Semantic("missing mpc.baseMVA".into()))?;
    let find = |n: &str| mats.iter().find(|(name, _)| name == n).map(|(_, m)| m);
    let bus_m = find("bus").ok_or_else(|| CaseError::Semantic("missing mpc.bus".into()))?;
    let branch_m = find("branch").ok_or_else(|| CaseError::Semantic("missing mpc.branch".into()))?;
    require_cols("bus", bus_m, 13)?;
    require_cols("branch", branch_m, 11)?;

    let mut buses = Vec::new();
    for r in &bus_m.rows {
        let kind = match r[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            _ => continue, // isolated
        };
        let (mut v_min, mut v_max) = (r[12], r[11]);
        if !(v_min > 0.0 && v_min < v_max) {
            v_min = 0.9;
            v_max = 1.1;
        }
        buses.push(Bus {
            id: r[0] as usize,
            kind,
            v_min,
            v_max,
            nominal_kv: r[9],
            v_set: if r[7] > 0.0 { r[7] } else { 1.0 },
            load_p: r[2] / base,
            load_q: r[3] / base,
            gen_p: 0.0,
            gs: r[4] / base,
            bs: r[5] / base,
        });
    }

    let mut units = Vec::new();
    if let Some(gen_m) = find("gen") {
        require_cols("gen", gen_m, 10)?;
        for r in &gen_m.rows {
            if r[7] <= 0.0 {
                continue;
            }
            let bus_id = r[0] as usize;
            let Some(bus) = buses.iter_mut().find(|b| b.id == bus_id) else {
                return Err(CaseError::Semantic(format!("generator at unknown bus {bus_id}")));
            };
            match bus.kind {
                BusKind::Pq => {
                    let rating = r[8].max(r[1]) / base;
                    if rating <= 0.0 {
                        bus.gen_p += r[1] / base;
                        continue;
                    }
                    units.push(ControllableUnit {
                        id: units.len() + 1,
                        bus: bus_id,
                        q_min: (r[4] / base).min(0.0),
                        q_max: (r[3] / base).max(0.0),
                        p_rating: rating,
                    });
                }
                BusKind::Pv | BusKind::Slack => {
                    bus.gen_p += r[1] / base;
                    if r[5] > 0.0 {
                        bus.v_set = r[5];
                    }
                }
            }
        }
    }

    let mut branches = Vec::new();
    for r in &branch_m.rows {
        if r.len() > 10 && r[10] <= 0.0 {
            continue;
        }
        let (from, to) = (r[0] as usize, r[1] as usize);
        if !buses.iter().any(|b| b.id == from) || !buses.iter().any(|b| b.id == to) {
            // touches an isolated bus
            continue;
        }
        if r[9] != 0.0 {
            warn!("branch {from}-{to}: phase shift {} deg ignored", r[9]);
        }
        let tap = (r[8] != 0.0).then(|| {
            let centre = (DEFAULT_TAP_POSITIONS / 2) as f64;
            TapSpec {
                n_positions: DEFAULT_TAP_POSITIONS,
                ratio_min: r[8] - centre * TAP_STEP,
                ratio_max: r[8] + centre * TAP_STEP,
                controllable: false,
                initial: DEFAULT_TAP_POSITIONS / 2,
            }
        });
        branches.push(Branch {
            id: branches.len() + 1,
            from_bus: from,
            to_bus: to,
            r: r[2],
            x: r[3],
            b_shunt: r[4],
            flow_max: if r[5] > 0.0 { r[5] / base } else { f64::INFINITY },
            tap,
        });
    }

    let case = GridCase {
        name: String::from("imported"),
        base_mva: base,
        buses,
        branches,
        units,
        local_taps: Vec::new(),
    };
    let diags = validate(&case);
    if !diags.is_empty() {
        return Err(CaseError::Semantic(
            diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "),
        ));
    }
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE4: &str = r#"
function mpc = case4
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
%	bus_i	type	Pd	Qd	Gs	Bs	area	Vm	Va	baseKV	zone	Vmax	Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1.02	0	225	1	1.1	0.9;
	2	1	50	10	0	5	1	1	0	90	1	1.07	0.93;
	3	1	0	0	0	0	1	1	0	90	1	1.07	0.93;
	4	2	20	0	0	0	1	1	0	90	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	300	-300	1.02	100	1	500	0;
	3	10	0	20	-20	1	100	1	40	0;
	4	15	0	50	-50	1.01	100	1	60	0;
];
mpc.branch = [
	1	2	0.001	0.02	0	150	0	0	0.975	0	1	-360	360;
	2	3	0.01	0.05	0.02	0	0	0	0	0	1	-360	360;
	2	4	0.01	0.05	0.02	80	0	0	0	0	1	-360	360;
	3	4	0.01	0.05	0.02	80	0	0	0	0	0	-360	360;
];
"#;

    #[test]
    fn imports_table_layout() {
        let case = parse_matpower(CASE4).unwrap();
        assert_eq!(case.base_mva, 100.0);
        assert_eq!(case.buses.len(), 4);
        // out-of-service branch dropped
        assert_eq!(case.branches.len(), 3);
        assert_eq!(case.units.len(), 1);
        assert_eq!(case.units[0].bus, 3);
        assert!((case.units[0].p_rating - 0.4).abs() < 1e-12);
        assert!((case.buses[1].load_p - 0.5).abs() < 1e-12);
        assert!((case.buses[1].bs - 0.05).abs() < 1e-12);
        assert!((case.buses[3].gen_p - 0.15).abs() < 1e-12);
        assert_eq!(case.buses[3].v_set, 1.01);
        assert_eq!(case.branches[1].flow_max, f64::INFINITY);
        assert!((case.branches[2].flow_max - 0.8).abs() < 1e-12);
        let tap = case.branches[0].tap.as_ref().unwrap();
        assert!((tap.ratio(tap.initial).unwrap() - 0.975).abs() < 1e-12);
    }

    #[test]
    fn unclosed_matrix_is_syntax_error() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 225 1 1.1 0.9;\n";
        assert!(matches!(parse_matpower(text), Err(CaseError::Syntax { line: 2, .. })));
    }

    #[test]
    fn bad_number_reports_line() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 x 0 0 0 1 1 0 225 1 1.1 0.9;\n];";
        assert!(matches!(parse_matpower(text), Err(CaseError::Syntax { line: 3, column: 5, .. })));
    }
}
