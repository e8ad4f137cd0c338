use std::fmt::Write as _;
use std::path::Path;

use super::CdDiagram;
use crate::error::Result;
use crate::util::write_atomic;

pub const CD_AXIS_LEFT: f64 = 160.0;
pub const CD_AXIS_WIDTH: f64 = 480.0;
const CD_WIDTH: f64 = CD_AXIS_LEFT * 2.0 + CD_AXIS_WIDTH;
const AXIS_Y: f64 = 60.0;
const LABEL_STEP: f64 = 22.0;
const BAR_STEP: f64 = 8.0;

/// Horizontal position of an average rank on an axis running from 1 to `k`.
pub fn axis_x(rank: f64, k: usize) -> f64 {
    let span = (k.max(2) - 1) as f64;
    CD_AXIS_LEFT + (rank - 1.0) / span * CD_AXIS_WIDTH
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Rank axis with the better half of the classifiers labelled on the left,
/// the rest on the right, and a thick bar under each clique.
pub fn cd_svg(d: &CdDiagram) -> String {
    let k = d.classifiers.len();
    let left = k.div_ceil(2);
    let bars_top = AXIS_Y + 14.0;
    let labels_top = bars_top + BAR_STEP * d.cliques.len() as f64 + 16.0;
    let height = labels_top + LABEL_STEP * left as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CD_WIDTH}" height="{height}" viewBox="0 0 {CD_WIDTH} {height}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(s, r#"<line x1="{CD_AXIS_LEFT}" y1="{AXIS_Y}" x2="{}" y2="{AXIS_Y}" stroke="black" stroke-width="1.5"/>"#, CD_AXIS_LEFT + CD_AXIS_WIDTH);
    for r in 1..=k {
        let x = axis_x(r as f64, k);
        let _ = writeln!(s, r#"<line x1="{x}" y1="{}" x2="{x}" y2="{AXIS_Y}" stroke="black"/>"#, AXIS_Y - 6.0);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{r}</text>"#, AXIS_Y - 10.0);
    }
    for (i, c) in d.cliques.iter().enumerate() {
        let lo = c.iter().map(|&m| d.average_ranks[m]).fold(f64::INFINITY, f64::min);
        let hi = c.iter().map(|&m| d.average_ranks[m]).fold(f64::NEG_INFINITY, f64::max);
        let y = bars_top + BAR_STEP * i as f64;
        let _ = writeln!(
            s,
            r#"<line class="clique" x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="black" stroke-width="4" stroke-linecap="round"/>"#,
            axis_x(lo, k) - 3.0,
            axis_x(hi, k) + 3.0
        );
    }
    for (i, (name, &rank)) in d.classifiers.iter().zip(&d.average_ranks).enumerate() {
        let x = axis_x(rank, k);
        let (row, on_left) = if i < left { (i, true) } else { (k - 1 - i, false) };
        let y = labels_top + LABEL_STEP * row as f64;
        let (tx, anchor) = if on_left { (CD_AXIS_LEFT - 10.0, "end") } else { (CD_AXIS_LEFT + CD_AXIS_WIDTH + 10.0, "start") };
        let _ = writeln!(s, r#"<polyline points="{x},{AXIS_Y} {x},{y} {tx},{y}" fill="none" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{tx}" y="{}" text-anchor="{anchor}">{} ({rank:.4})</text>"#, y + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Terminal rendering: classifiers by rank, then one line per clique.
pub fn cd_text(d: &CdDiagram) -> String {
    let width = d.classifiers.iter().map(String::len).max().unwrap_or(0);
    let mut s = String::from("average rank  classifier\n");
    for (name, rank) in d.classifiers.iter().zip(&d.average_ranks) {
        let _ = writeln!(s, "{rank:>12.4}  {name:<width$}");
    }
    if d.cliques.is_empty() {
        s.push_str("no cliques: every pair differs significantly\n");
    } else {
        for names in d.clique_names() {
            let _ = writeln!(s, "clique: {}", names.join(", "));
        }
    }
    s
}

/// Write `cd.svg` and `cd.txt` into `dir`.
pub fn render_cd_diagram(d: &CdDiagram, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    write_atomic(&dir.join("cd.svg"), cd_svg(d).as_bytes())?;
    write_atomic(&dir.join("cd.txt"), cd_text(d).as_bytes())
}
