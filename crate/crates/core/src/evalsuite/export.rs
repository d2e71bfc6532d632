use std::fmt::Write as _;
use std::path::Path;

use super::{CdfCurve, EvalReport, Result};

/// Two columns, `error_m,cum_prob`, one row per CDF point.
pub fn cdf_csv(curve: &CdfCurve) -> String {
    let mut out = String::from("error_m,cum_prob\n");
    for (e, p) in &curve.points {
        let _ = writeln!(out, "{e},{p}");
    }
    out
}

pub fn write_cdf_csv(path: &Path, curve: &CdfCurve) -> Result<()> {
    std::fs::write(path, cdf_csv(curve))?;
    Ok(())
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut json = report.to_json()?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

/// MSE / MAE / R^2 / misalignment rows, one per report.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                r.config_tag.clone(),
                r.mse_m2.to_string(),
                r.mae_m.to_string(),
                r.r2.to_string(),
                format!("{}/{}", r.n_misaligned, r.n_total),
            ]
        })
        .collect();
    table(&["Config", "MSE (m^2)", "MAE (m)", "R^2", "Misalignments"], &rows)
}

/// 25th/50th/75th/100th percentile errors, one row per report.
pub fn percentile_table(reports: &[EvalReport]) -> String {
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            let pct = |k: u32| r.percentiles.get(&k).map_or("undefined".to_string(), |m| m.to_string());
            [r.config_tag.clone(), pct(25), pct(50), pct(75), pct(100)]
        })
        .collect();
    table(&["Config", "25th (m)", "50th (m)", "75th (m)", "100th (m)"], &rows)
}

fn table<const N: usize>(header: &[&str; N], rows: &[[String; N]]) -> String {
    let mut width: [usize; N] = header.map(str::len);
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
    };
    line(&mut out, &mut header.iter().copied());
    let _ = writeln!(out, "{}", width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
    for row in rows {
        line(&mut out, &mut row.iter().map(String::as_str));
    }
    out
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Step plot of one or more CDFs as a standalone SVG document.
pub fn cdf_svg(curves: &[(String, CdfCurve)], title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;
    let max_err = curves.iter().flat_map(|(_, c)| c.points.iter().map(|p| p.0)).fold(0.0f64, f64::max);
    let x_max = if max_err > 0.0 { nice_ceil(max_err) } else { 1.0 };
    let px = |e: f64| LEFT + e / x_max * (W - LEFT - RIGHT);
    let py = |p: f64| H - BOTTOM - p * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let (x, y) = (px(v * x_max), py(v));
        let _ =
            writeln!(s, r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/>"##, py(0.0), py(1.0));
        let _ =
            writeln!(s, r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, px(0.0), px(x_max));
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            py(0.0) + 16.0,
            fmt_tick(v * x_max)
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, px(0.0) - 6.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Localization error (m)</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">Cumulative probability</text>"#,
        y = (TOP + H - BOTTOM) / 2.0
    );
    for (k, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut pts = vec![format!("{:.2},{:.2}", px(0.0), py(0.0))];
        let mut prev = 0.0;
        for &(e, p) in &curve.points {
            pts.push(format!("{:.2},{:.2}", px(e), py(prev)));
            pts.push(format!("{:.2},{:.2}", px(e), py(p)));
            prev = p;
        }
        pts.push(format!("{:.2},{:.2}", px(x_max), py(prev)));
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = TOP + 16.0 + 18.0 * k as f64;
        let lx = W - RIGHT - 150.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 24.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Smallest of 1, 2, 5 times a power of ten that is at least `v`.
fn nice_ceil(v: f64) -> f64 {
    let base = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * base).find(|&c| c >= v).unwrap_or(10.0 * base)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::super::cdf;
    use super::*;

    #[test]
    fn csv_layout() {
        let c = cdf(&[1.0, 0.5]).unwrap();
        assert_eq!(cdf_csv(&c), "error_m,cum_prob\n0.5,0.5\n1,1\n");
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let c = cdf(&[1.0, 0.5, 3.2]).unwrap();
        let svg = cdf_svg(&[("BOTH".into(), c.clone()), ("A<B".into(), c)], "CDF");
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("A&lt;B"));
        assert_eq!(nice_ceil(3.2), 5.0);
        assert_eq!(nice_ceil(0.7), 1.0);
    }

    #[test]
    fn tables_have_expected_columns() {
        let r = EvalReport::from_predictions("3B", &[6.0, 7.0], &[Some(6.0), None]).unwrap();
        let t = summary_table(std::slice::from_ref(&r));
        let header = t.lines().next().unwrap();
        for col in ["MSE", "MAE", "R^2", "Misalignments"] {
            assert!(header.contains(col));
        }
        assert!(t.contains("1/2"));
        assert!(t.contains("undefined"));
        let p = percentile_table(&[r]);
        assert!(p.lines().next().unwrap().contains("100th"));
    }
}
