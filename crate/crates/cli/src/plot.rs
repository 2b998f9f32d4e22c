use std::fmt::Write as _;

use crate::error::{CliError, CliResult};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const LEGEND_WIDTH: f64 = 160.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Scatter of the first two coordinates, one circle per task, colored by
/// label with one legend entry per distinct label (in order of first
/// appearance). Output depends only on the inputs.
pub fn scatter_svg(names: &[String], coords: &[Vec<f64>], labels: &[String]) -> CliResult<String> {
    if coords.iter().any(|c| c.len() < 2) {
        return Err(CliError::Data("plot needs an embedding with at least 2 dimensions".into()));
    }
    if names.len() != coords.len() || labels.len() != coords.len() {
        return Err(CliError::Data("names, coordinates and labels differ in length".into()));
    }
    let mut legend: Vec<&str> = Vec::new();
    for l in labels {
        if !legend.contains(&l.as_str()) {
            legend.push(l);
        }
    }
    let color = |l: &str| PALETTE[legend.iter().position(|x| *x == l).unwrap() % PALETTE.len()];

    let range = |axis: usize| {
        let (lo, hi) = coords
            .iter()
            .map(|c| c[axis])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if coords.is_empty() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = range(0);
    let (y0, y1) = range(1);
    let plot_w = WIDTH - LEGEND_WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">dim1</text>"#,
        MARGIN + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {:.1})">dim2</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(s, r#"<g class="points">"#);
    for ((name, c), l) in names.iter().zip(coords).zip(labels) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"><title>{}</title></circle>"#,
            sx(c[0]),
            sy(c[1]),
            color(l),
            escape(name)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="legend">"#);
    for (i, l) in legend.iter().enumerate() {
        let y = MARGIN + 18.0 * i as f64;
        let x = WIDTH - LEGEND_WIDTH + 10.0;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><rect x="{x:.1}" y="{y:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text></g>"#,
            color(l),
            x + 16.0,
            y + 9.0,
            escape(l)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn one_circle_per_point_and_one_legend_entry_per_label() {
        let coords = vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![-1.0, 0.5]];
        let labels = vec!["a".to_string(), "b".into(), "a".into()];
        let svg = scatter_svg(&names(3), &coords, &labels).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches(r#"class="legend-entry""#).count(), 2);
    }

    #[test]
    fn labels_are_escaped() {
        let svg = scatter_svg(&names(1), &[vec![0.0, 0.0]], &["a<b".to_string()]).unwrap();
        assert!(svg.contains("a&lt;b"));
    }

    #[test]
    fn one_dimensional_embedding_is_rejected() {
        assert!(scatter_svg(&names(1), &[vec![0.0]], &["a".to_string()]).is_err());
    }
}
