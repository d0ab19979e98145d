//! Six-panel SVG of a run, computed from `records.csv` text alone.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("records file has no header")]
    NoHeader,
    #[error("records line {line}: {message}")]
    BadRow { line: usize, message: String },
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 44.0;
const COLORS: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// `prefix` followed only by digits, e.g. `v_12`.
fn is_series(name: &str, prefix: &str) -> bool {
    name.strip_prefix(prefix)
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn parse(csv: &str) -> Result<Table, PlotError> {
    let mut lines = csv.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (_, head) = lines.next().ok_or(PlotError::NoHeader)?;
    let header: Vec<String> = head.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(PlotError::BadRow {
                line: i + 1,
                message: format!("{} cells, header has {}", cells.len(), header.len()),
            });
        }
        // non-numeric cells (status) become NaN and are skipped when drawing
        rows.push(cells.iter().map(|c| c.trim().parse::<f64>().unwrap_or(f64::NAN)).collect());
    }
    Ok(Table { header, rows })
}

fn panel(out: &mut String, table: &Table, cols: &[usize], title: &str, ox: f64, oy: f64) {
    let step_col = table.header.iter().position(|h| h == "step");
    let xs: Vec<f64> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| step_col.map_or(i as f64, |c| r[c]))
        .collect();
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &c in cols {
        for r in &table.rows {
            if r[c].is_finite() {
                ymin = ymin.min(r[c]);
                ymax = ymax.max(r[c]);
            }
        }
    }
    if !ymin.is_finite() {
        (ymin, ymax) = (0.0, 1.0);
    }
    if ymax - ymin < 1e-9 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let (xmin, xmax) = (
        xs.first().copied().unwrap_or(0.0),
        xs.last().copied().unwrap_or(1.0).max(xs.first().copied().unwrap_or(0.0) + 1.0),
    );
    let (pw, ph) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let px = |x: f64| ox + MARGIN + (x - xmin) / (xmax - xmin) * pw;
    let py = |y: f64| oy + MARGIN + (1.0 - (y - ymin) / (ymax - ymin)) * ph;

    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##,
        ox + MARGIN,
        oy + MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{title}</text>"#,
        ox + PANEL_W / 2.0,
        oy + MARGIN - 12.0
    );
    for (y, label) in [(ymax, ymax), (ymin, ymin)] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{label:.4}</text>"#,
            ox + MARGIN - 4.0,
            py(y) + 4.0
        );
    }
    for x in [xmin, xmax] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{x}</text>"#,
            px(x),
            oy + PANEL_H - MARGIN + 14.0
        );
    }
    for (n, &c) in cols.iter().enumerate() {
        let color = COLORS[n % COLORS.len()];
        let mut pts = String::new();
        for (r, &x) in table.rows.iter().zip(&xs) {
            if r[c].is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", px(x), py(r[c]));
            }
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            pts.trim_end()
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" fill="{color}">{}</text>"#,
            ox + PANEL_W - MARGIN + 4.0,
            oy + MARGIN + 10.0 + 10.0 * n as f64,
            table.header[c]
        );
    }
}

/// Render voltages, line usage, wind, reactive and active setpoints, and tap positions.
pub fn plot_svg(csv: &str) -> Result<String, PlotError> {
    let table = parse(csv)?;
    let pick = |pred: &dyn Fn(&str) -> bool| -> Vec<usize> {
        table.header.iter().enumerate().filter(|(_, h)| pred(h)).map(|(i, _)| i).collect()
    };
    let panels: [(&str, Vec<usize>); 6] = [
        ("Bus voltages (p.u.)", pick(&|h| is_series(h, "v_"))),
        ("Line usage (flow / limit)", pick(&|h| is_series(h, "use_"))),
        ("Wind: available and injected", pick(&|h| h == "available" || h == "injected")),
        ("Reactive power setpoints", pick(&|h| is_series(h, "q_"))),
        ("Active power setpoints", pick(&|h| is_series(h, "p_"))),
        ("Tap positions", pick(&|h| is_series(h, "tap_") || is_series(h, "lt_"))),
    ];
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif">"#,
        3.0 * PANEL_W,
        2.0 * PANEL_H
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, (title, cols)) in panels.iter().enumerate() {
        let ox = (i % 3) as f64 * PANEL_W;
        let oy = (i / 3) as f64 * PANEL_H;
        panel(&mut out, &table, cols, title, ox, oy);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "# mode=x\nstep,status,available,injected,v_1,v_violation,q_1,p_1,tap_3,use_2\n\
                       0,optimal,1,1,1.01,0,0,1,16,0.5\n1,optimal,2,1.5,1.02,0,0.1,1.5,17,0.9\n";

    #[test]
    fn renders_all_panels() {
        let svg = plot_svg(CSV).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 7);
        assert!(!svg.contains(">v_violation<"));
        assert_eq!(svg, plot_svg(CSV).unwrap());
    }

    #[test]
    fn rejects_ragged_rows() {
        assert_eq!(plot_svg("").unwrap_err(), PlotError::NoHeader);
        assert!(matches!(plot_svg("a,b\n1\n"), Err(PlotError::BadRow { line: 2, .. })));
    }
}
