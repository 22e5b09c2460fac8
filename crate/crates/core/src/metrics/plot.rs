//! Minimal SVG histograms and box plots for biomarker and error distributions.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLOURS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

fn header(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>", W / 2.0, escape(title));
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>", H - PAD);
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(series: &[(&str, &[f64])]) -> (f64, f64) {
    let vals = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn axis_labels(s: &mut String, lo: f64, hi: f64) {
    let _ = writeln!(s, "<text x=\"{PAD}\" y=\"{}\" font-size=\"11\">{lo:.4}</text>", H - PAD + 16.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{hi:.4}</text>", W - PAD, H - PAD + 16.0);
}

fn legend(s: &mut String, names: impl Iterator<Item = String>) {
    for (i, name) in names.enumerate() {
        let y = PAD + 16.0 * i as f64;
        let c = COLOURS[i % COLOURS.len()];
        let _ = writeln!(s, "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{c}\"/>", W - PAD - 120.0, y - 9.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{y}\" font-size=\"12\">{}</text>", W - PAD - 105.0, escape(&name));
    }
}

/// Overlaid density-normalised histograms sharing one set of bins.
pub fn histogram_svg(title: &str, series: &[(&str, &[f64])], bins: usize) -> String {
    let bins = bins.max(1);
    let (lo, hi) = range(series);
    let width = (hi - lo) / bins as f64;
    let densities: Vec<Vec<f64>> = series
        .iter()
        .map(|(_, v)| {
            let mut counts = vec![0.0; bins];
            for &x in v.iter().filter(|x| x.is_finite()) {
                let b = (((x - lo) / width) as usize).min(bins - 1);
                counts[b] += 1.0;
            }
            let n = v.len().max(1) as f64;
            counts.iter().map(|c| c / n).collect()
        })
        .collect();
    let top = densities.iter().flatten().copied().fold(0.0, f64::max).max(1e-12);
    let mut s = header(title);
    let px = (W - 2.0 * PAD) / bins as f64;
    for (i, d) in densities.iter().enumerate() {
        let c = COLOURS[i % COLOURS.len()];
        for (b, &v) in d.iter().enumerate() {
            let h = v / top * (H - 2.0 * PAD);
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{c}\" fill-opacity=\"0.5\"/>",
                PAD + b as f64 * px,
                H - PAD - h,
                px,
                h
            );
        }
    }
    axis_labels(&mut s, lo, hi);
    legend(&mut s, series.iter().map(|(n, v)| format!("{n} (n={})", v.len())));
    s.push_str("</svg>\n");
    s
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// One horizontal box per group: whiskers at min/max, box at the quartiles, bar at the median.
pub fn boxplot_svg(title: &str, groups: &[(&str, &[f64])]) -> String {
    let (lo, hi) = range(groups);
    let x = |v: f64| PAD + (v - lo) / (hi - lo) * (W - 2.0 * PAD);
    let mut s = header(title);
    let row = (H - 2.0 * PAD) / groups.len().max(1) as f64;
    for (i, (name, values)) in groups.iter().enumerate() {
        let mut v: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let c = COLOURS[i % COLOURS.len()];
        let y = PAD + row * (i as f64 + 0.5);
        let (q1, med, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let bh = (row * 0.5).min(40.0);
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{c}\"/>",
            x(v[0]),
            x(v[v.len() - 1])
        );
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{bh:.2}\" fill=\"{c}\" fill-opacity=\"0.4\" stroke=\"{c}\"/>",
            x(q1),
            y - bh / 2.0,
            (x(q3) - x(q1)).max(1.0)
        );
        let _ = writeln!(
            s,
            "<line x1=\"{m:.2}\" y1=\"{:.2}\" x2=\"{m:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>",
            y - bh / 2.0,
            y + bh / 2.0,
            m = x(med)
        );
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" font-size=\"12\">{}</text>", PAD + 4.0, y - bh / 2.0 - 4.0, escape(name));
    }
    axis_labels(&mut s, lo, hi);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svgs_are_well_formed_and_count_bars() {
        let a = [1.0, 2.0, 2.5, 3.0];
        let b = [2.0, 2.2];
        let h = histogram_svg("volumes <mm³>", &[("real", &a), ("virtual", &b)], 5);
        assert!(h.starts_with("<svg") && h.trim_end().ends_with("</svg>"));
        assert!(h.contains("&lt;mm³&gt;"));
        // background plus two legend swatches plus one bar per bin per series
        assert_eq!(h.matches("<rect").count(), 1 + 2 + 10);
        let bp = boxplot_svg("errors", &[("HD", &a), ("empty", &[])]);
        assert_eq!(bp.matches("stroke-width=\"2\"").count(), 1);
    }

    #[test]
    fn constant_series_does_not_divide_by_zero() {
        let svg = boxplot_svg("flat", &[("c", &[3.0, 3.0])]);
        assert!(!svg.contains("NaN"));
        let svg = histogram_svg("flat", &[("c", &[3.0, 3.0])], 4);
        assert!(!svg.contains("NaN"));
    }
}
