//! Native line-oriented case format.
//!
//! ```text
//! [CASE]
//! name     <word>
//! base_mva <float>
//!
//! [BUS]
//! # id kind v_min v_max nominal_kv v_set load_p load_q gen_p [gs bs]
//!
//! [BRANCH]
//! # id from to r x b flow_max [n_positions ratio_min ratio_max ctl|fixed initial]
//!
//! [UNIT]
//! # id bus q_min q_max p_rating
//!
//! [LOCALTAP]
//! # branch monitored_bus deadband_low deadband_high
//! ```
//!
//! Columns are whitespace separated, `#` starts a comment, all quantities are
//! per-unit on `base_mva`. `inf` is accepted for unlimited flows.

use std::fmt::Write as _;

use super::{
    validate, Branch, Bus, BusKind, CaseError, ControllableUnit, GridCase, LocalTapController,
    TapSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Case,
    Bus,
    Branch,
    Unit,
    LocalTap,
}

struct Token<'a> {
    col: usize,
    text: &'a str,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    col: s + 1,
                    text: &line[s..i],
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            col: s + 1,
            text: &line[s..],
        });
    }
    out
}

struct Row<'a> {
    line: usize,
    tokens: Vec<Token<'a>>,
    end_col: usize,
}

impl<'a> Row<'a> {
    fn err(&self, col: usize, message: impl Into<String>) -> CaseError {
        CaseError::Syntax {
            line: self.line,
            column: col,
            message: message.into(),
        }
    }

    fn expect_len(&self, allowed: &[usize], what: &str) -> Result<(), CaseError> {
        if allowed.contains(&self.tokens.len()) {
            return Ok(());
        }
        let col = self
            .tokens
            .get(allowed[0])
            .map(|t| t.col)
            .unwrap_or(self.end_col);
        Err(self.err(
            col,
            format!(
                "{what} row expects {} columns, found {}",
                allowed
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(" or "),
                self.tokens.len()
            ),
        ))
    }

    fn f64(&self, i: usize) -> Result<f64, CaseError> {
        let t = &self.tokens[i];
        t.text
            .parse::<f64>()
            .map_err(|_| self.err(t.col, format!("expected a number, found '{}'", t.text)))
    }

    fn usize(&self, i: usize) -> Result<usize, CaseError> {
        let t = &self.tokens[i];
        t.text
            .parse::<usize>()
            .map_err(|_| self.err(t.col, format!("expected a non-negative integer, found '{}'", t.text)))
    }

    fn text(&self, i: usize) -> &'a str {
        self.tokens[i].text
    }
}

/// Parse a case document and check every structural invariant.
pub fn parse_case(text: &str) -> Result<GridCase, CaseError> {
    let case = parse_case_unvalidated(text)?;
    let diags = validate(&case);
    if diags.is_empty() {
        Ok(case)
    } else {
        Err(CaseError::Semantic(
            diags
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        ))
    }
}

/// Parse a case document without running [`validate`].
pub fn parse_case_unvalidated(text: &str) -> Result<GridCase, CaseError> {
    let mut case = GridCase {
        name: String::from("unnamed"),
        base_mva: 100.0,
        buses: Vec::new(),
        branches: Vec::new(),
        units: Vec::new(),
        local_taps: Vec::new(),
    };
    let mut section: Option<Section> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("");
        let tokens = tokenize(content);
        if tokens.is_empty() {
            continue;
        }
        let row = Row {
            line: lineno + 1,
            end_col: content.trim_end().chars().count() + 1,
            tokens,
        };
        let first = row.text(0);
        if first.starts_with('[') {
            if row.tokens.len() != 1 || !first.ends_with(']') {
                return Err(row.err(row.tokens[0].col, "malformed section header"));
            }
            section = Some(match &first[1..first.len() - 1].to_ascii_uppercase()[..] {
                "CASE" => Section::Case,
                "BUS" => Section::Bus,
                "BRANCH" => Section::Branch,
                "UNIT" => Section::Unit,
                "LOCALTAP" => Section::LocalTap,
                other => {
                    return Err(row.err(row.tokens[0].col, format!("unknown section '{other}'")))
                }
            });
            continue;
        }
        match section {
            None => return Err(row.err(row.tokens[0].col, "data before the first section header")),
            Some(Section::Case) => {
                row.expect_len(&[2], "CASE")?;
                match first {
                    "name" => case.name = row.text(1).to_string(),
                    "base_mva" => case.base_mva = row.f64(1)?,
                    other => {
                        return Err(row.err(row.tokens[0].col, format!("unknown CASE key '{other}'")))
                    }
                }
            }
            Some(Section::Bus) => {
                row.expect_len(&[9, 11], "BUS")?;
                let kind: BusKind = row
                    .text(1)
                    .parse()
                    .map_err(|e: String| row.err(row.tokens[1].col, e))?;
                let (gs, bs) = if row.tokens.len() == 11 {
                    (row.f64(9)?, row.f64(10)?)
                } else {
                    (0.0, 0.0)
                };
                case.buses.push(Bus {
                    id: row.usize(0)?,
                    kind,
                    v_min: row.f64(2)?,
                    v_max: row.f64(3)?,
                    nominal_kv: row.f64(4)?,
                    v_set: row.f64(5)?,
                    load_p: row.f64(6)?,
                    load_q: row.f64(7)?,
                    gen_p: row.f64(8)?,
                    gs,
                    bs,
                });
            }
            Some(Section::Branch) => {
                row.expect_len(&[7, 12], "BRANCH")?;
                let tap = if row.tokens.len() == 12 {
                    let controllable = match row.text(10) {
                        "ctl" => true,
                        "fixed" => false,
                        other => {
                            return Err(row.err(
                                row.tokens[10].col,
                                format!("tap mode must be 'ctl' or 'fixed', found '{other}'"),
                            ))
                        }
                    };
                    Some(TapSpec {
                        n_positions: row.usize(7)?,
                        ratio_min: row.f64(8)?,
                        ratio_max: row.f64(9)?,
                        controllable,
                        initial: row.usize(11)?,
                    })
                } else {
                    None
                };
                case.branches.push(Branch {
                    id: row.usize(0)?,
                    from_bus: row.usize(1)?,
                    to_bus: row.usize(2)?,
                    r: row.f64(3)?,
                    x: row.f64(4)?,
                    b_shunt: row.f64(5)?,
                    flow_max: row.f64(6)?,
                    tap,
                });
            }
            Some(Section::Unit) => {
                row.expect_len(&[5], "UNIT")?;
                case.units.push(ControllableUnit {
                    id: row.usize(0)?,
                    bus: row.usize(1)?,
                    q_min: row.f64(2)?,
                    q_max: row.f64(3)?,
                    p_rating: row.f64(4)?,
                });
            }
            Some(Section::LocalTap) => {
                row.expect_len(&[4], "LOCALTAP")?;
                case.local_taps.push(LocalTapController {
                    branch: row.usize(0)?,
                    monitored_bus: row.usize(1)?,
                    deadband_low: row.f64(2)?,
                    deadband_high: row.f64(3)?,
                });
            }
        }
    }
    Ok(case)
}

/// Write a case in the native format. `parse_case(serialize_case(c)) == c` for valid cases.
pub fn serialize_case(case: &GridCase) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[CASE]");
    let _ = writeln!(s, "name {}", case.name);
    let _ = writeln!(s, "base_mva {}", case.base_mva);
    let _ = writeln!(s, "\n[BUS]");
    let _ = writeln!(s, "# id kind v_min v_max nominal_kv v_set load_p load_q gen_p gs bs");
    for b in &case.buses {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {}",
            b.id,
            b.kind.as_str(),
            b.v_min,
            b.v_max,
            b.nominal_kv,
            b.v_set,
            b.load_p,
            b.load_q,
            b.gen_p,
            b.gs,
            b.bs
        );
    }
    let _ = writeln!(s, "\n[BRANCH]");
    let _ = writeln!(
        s,
        "# id from to r x b flow_max [n_positions ratio_min ratio_max ctl|fixed initial]"
    );
    for br in &case.branches {
        let _ = write!(
            s,
            "{} {} {} {} {} {} {}",
            br.id, br.from_bus, br.to_bus, br.r, br.x, br.b_shunt, br.flow_max
        );
        if let Some(t) = &br.tap {
            let _ = write!(
                s,
                " {} {} {} {} {}",
                t.n_positions,
                t.ratio_min,
                t.ratio_max,
                if t.controllable { "ctl" } else { "fixed" },
                t.initial
            );
        }
        s.push('\n');
    }
    let _ = writeln!(s, "\n[UNIT]");
    let _ = writeln!(s, "# id bus q_min q_max p_rating");
    for u in &case.units {
        let _ = writeln!(s, "{} {} {} {} {}", u.id, u.bus, u.q_min, u.q_max, u.p_rating);
    }
    let _ = writeln!(s, "\n[LOCALTAP]");
    let _ = writeln!(s, "# branch monitored_bus deadband_low deadband_high");
    for lt in &case.local_taps {
        let _ = writeln!(
            s,
            "{} {} {} {}",
            lt.branch, lt.monitored_bus, lt.deadband_low, lt.deadband_high
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn three_bus_fixture_parses() {
        let case = parse_case(fixtures::THREE_BUS).unwrap();
        assert_eq!(case.buses.len(), 3);
        assert_eq!(case.branches.len(), 2);
        assert_eq!(case.slack_count(), 1);
    }

    #[test]
    fn mini_blocaux_fixture_parses() {
        let case = parse_case(fixtures::MINI_BLOCAUX).unwrap();
        assert_eq!(case.units.len(), 4);
        assert_eq!(case.n_controllable_taps(), 2);
        assert_eq!(case.local_taps.len(), 1);
    }

    #[test]
    fn unknown_bus_is_semantic_error() {
        let text = fixtures::THREE_BUS.replace("2 2 3 ", "2 2 99 ");
        match parse_case(&text) {
            Err(CaseError::Semantic(msg)) => assert!(msg.contains("unknown bus"), "{msg}"),
            other => panic!("expected semantic error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_carries_position() {
        let text = "[BUS]\n1 slack 0.9 1.1 225 1.0 0 zero 0\n";
        match parse_case_unvalidated(text) {
            Err(CaseError::Syntax { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 27);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_column_count_reported() {
        let text = "[UNIT]\n1 2 -0.3\n";
        assert!(matches!(
            parse_case_unvalidated(text),
            Err(CaseError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn data_before_header_rejected() {
        assert!(parse_case_unvalidated("1 2 3\n").is_err());
        assert!(parse_case_unvalidated("[NOPE]\n").is_err());
    }

    #[test]
    fn fixtures_round_trip() {
        for text in [fixtures::THREE_BUS, fixtures::MINI_BLOCAUX, fixtures::TWO_BUS] {
            let case = parse_case(text).unwrap();
            assert_eq!(parse_case(&serialize_case(&case)).unwrap(), case);
        }
    }
}
