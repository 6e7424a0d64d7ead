//! Minimal static line plot: mean polyline, shaded band, axes.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 48.0;

/// `x`, `mean`, `lo`, `hi` must have equal length of at least two.
pub fn band_plot(x: &[f64], mean: &[f64], lo: &[f64], hi: &[f64]) -> String {
    let (x0, x1) = bounds(x.iter());
    let (y0, y1) = bounds(lo.iter().chain(hi).chain(mean));
    let sx = |v: f64| PAD + (v - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let pts = |ys: &mut dyn Iterator<Item = (f64, f64)>| ys.map(|(a, b)| format!("{:.2},{:.2}", sx(a), sy(b))).collect::<Vec<_>>().join(" ");

    let band = pts(&mut x.iter().copied().zip(hi.iter().copied()).chain(x.iter().copied().zip(lo.iter().copied()).rev()));
    let line = pts(&mut x.iter().copied().zip(mean.iter().copied()));

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##).unwrap();
    writeln!(s, r##"<polygon points="{band}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##).unwrap();
    writeln!(s, r##"<polyline points="{line}" fill="none" stroke="#08519c" stroke-width="2"/>"##).unwrap();
    let (ax, ay) = (PAD, H - PAD);
    writeln!(s, r#"<line x1="{ax}" y1="{ay}" x2="{}" y2="{ay}" stroke="black"/>"#, W - PAD).unwrap();
    writeln!(s, r#"<line x1="{ax}" y1="{ay}" x2="{ax}" y2="{PAD}" stroke="black"/>"#).unwrap();
    let label = |s: &mut String, x: f64, y: f64, anchor: &str, v: f64| {
        writeln!(s, r#"<text x="{x:.2}" y="{y:.2}" font-size="12" text-anchor="{anchor}">{v:.3}</text>"#).unwrap();
    };
    label(&mut s, sx(x0), ay + 16.0, "middle", x0);
    label(&mut s, sx(x1), ay + 16.0, "middle", x1);
    label(&mut s, ax - 4.0, sy(y0), "end", y0);
    label(&mut s, ax - 4.0, sy(y1), "end", y1);
    s.push_str("</svg>\n");
    s
}

fn bounds<'a>(vals: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}
