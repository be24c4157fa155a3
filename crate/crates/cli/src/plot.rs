//! SVG rendering of a hypnodensity with automatic and manual hypnograms.

use std::fmt::Write;

use somnet_core::{Stage, EPOCH_SECONDS};

const WIDTH: f64 = 1000.0;
const MARGIN: f64 = 50.0;
const DENSITY_HEIGHT: f64 = 160.0;
const TRACE_HEIGHT: f64 = 110.0;
const GAP: f64 = 30.0;

pub const STAGE_COLORS: [&str; 5] = ["#f2c14e", "#9dd1f1", "#508aa8", "#0a2463", "#d7263d"];

/// Display order of the hypnogram traces, top to bottom.
const TRACE_ORDER: [Stage; 5] = [Stage::W, Stage::Rem, Stage::N1, Stage::N2, Stage::N3];

fn trace_level(s: Stage) -> Option<usize> {
    TRACE_ORDER.iter().position(|t| *t == s)
}

fn trace(svg: &mut String, hyp: &[Stage], window: usize, seconds: usize, top: f64, color: &str, label: &str) {
    let plot_w = WIDTH - 2.0 * MARGIN;
    let x = |t: usize| MARGIN + plot_w * t as f64 / seconds.max(1) as f64;
    let y = |lvl: usize| top + TRACE_HEIGHT * (lvl as f64 + 0.5) / TRACE_ORDER.len() as f64;
    let mut path = String::new();
    let mut pen_up = true;
    for (i, s) in hyp.iter().enumerate() {
        match trace_level(*s) {
            Some(l) => {
                let cmd = if pen_up { 'M' } else { 'L' };
                let _ = write!(path, "{cmd}{:.2},{:.2} L{:.2},{:.2} ", x(i * window), y(l), x((i + 1) * window), y(l));
                pen_up = false;
            }
            None => pen_up = true,
        }
    }
    let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.trim_end());
    let _ = writeln!(svg, r#"<text x="{:.0}" y="{:.0}" font-size="12" fill="{color}">{label}</text>"#, WIDTH - MARGIN + 8.0, top + 14.0);
}

/// `density[k][t]` holds the probability of stage `k` at second `t`;
/// `automatic` has one stage per `window` seconds, `manual` one per epoch.
pub fn render(density: &[Vec<f64>], automatic: &[Stage], window: usize, manual: Option<&[Stage]>) -> String {
    let seconds = density.first().map_or(0, Vec::len);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let height = MARGIN + DENSITY_HEIGHT + GAP + TRACE_HEIGHT + MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let x = |t: usize| MARGIN + plot_w * t as f64 / seconds.max(1) as f64;
    let y = |p: f64| MARGIN + DENSITY_HEIGHT * (1.0 - p);
    let mut lower = vec![0.0; seconds];
    for (k, row) in density.iter().enumerate() {
        let upper: Vec<f64> = lower.iter().zip(row).map(|(l, p)| l + p).collect();
        let mut pts = String::new();
        for t in 0..seconds {
            let _ = write!(pts, "{:.2},{:.2} {:.2},{:.2} ", x(t), y(upper[t]), x(t + 1), y(upper[t]));
        }
        for t in (0..seconds).rev() {
            let _ = write!(pts, "{:.2},{:.2} {:.2},{:.2} ", x(t + 1), y(lower[t]), x(t), y(lower[t]));
        }
        let color = STAGE_COLORS[k % STAGE_COLORS.len()];
        let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" stroke="none"/>"#, pts.trim_end());
        let name = Stage::from_class(k).map_or("?", Stage::as_str);
        let _ = writeln!(
            svg,
            r#"<text x="{:.0}" y="{:.0}" font-size="12" fill="{color}">{name}</text>"#,
            WIDTH - MARGIN + 8.0,
            MARGIN + 14.0 * (k as f64 + 1.0)
        );
        lower = upper;
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN:.0}" y="{MARGIN:.0}" width="{plot_w:.0}" height="{DENSITY_HEIGHT:.0}" fill="none" stroke="black"/>"#
    );

    let top = MARGIN + DENSITY_HEIGHT + GAP;
    for (i, s) in TRACE_ORDER.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.0}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            top + TRACE_HEIGHT * (i as f64 + 0.5) / TRACE_ORDER.len() as f64 + 4.0,
            s.as_str()
        );
    }
    if let Some(m) = manual {
        trace(&mut svg, m, EPOCH_SECONDS, seconds, top, "#888888", "M");
    }
    trace(&mut svg, automatic, window, seconds, top, "#000000", "A");
    let _ = writeln!(
        svg,
        r#"<text x="{:.0}" y="{:.0}" font-size="12" text-anchor="middle">time (h)</text>"#,
        WIDTH / 2.0,
        height - 12.0
    );
    let hours = seconds as f64 / 3600.0;
    let _ = writeln!(svg, r#"<text x="{MARGIN:.0}" y="{:.0}" font-size="11">0</text>"#, height - 28.0);
    let _ = writeln!(svg, r#"<text x="{:.0}" y="{:.0}" font-size="11" text-anchor="end">{hours:.2}</text>"#, WIDTH - MARGIN, height - 28.0);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_every_stage_layer_and_both_traces() {
        let density: Vec<Vec<f64>> = (0..5).map(|_| vec![0.2; 60]).collect();
        let auto = vec![Stage::N2, Stage::Rem];
        let svg = render(&density, &auto, 30, Some(&[Stage::N2, Stage::Unknown]));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polygon").count(), 5);
        assert_eq!(svg.matches("<path").count(), 2);
    }
}
