//! CSV tables and SVG figures for a trained embedding.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::trajectory::{near_death_embeddings, time_to_event_curve, TimeToEventCurve};
use crate::cohort::{Cohort, OrganLabel, Outcome};
use crate::embedding::row_norms_sq;
use crate::error::{Error, Result};
use crate::numerics::{checkpoint, Scalar, Tensor};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;
const ORGAN_COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];
const OUTCOME_COLORS: [&str; 2] = ["#d62728", "#1f77b4"];
/// Cap on points drawn in the all-state projection.
const MAX_POINTS: usize = 3000;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOptions {
    pub histogram_bins: usize,
    pub max_hours: usize,
    pub separation_window: usize,
    /// Appended to every file name, e.g. `s1_0123abcd`.
    pub tag: String,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            histogram_bins: 20,
            max_hours: 48,
            separation_window: 24,
            tag: "report".into(),
        }
    }
}

/// Counts of `values` in `bins` equal-width bins over `[lo, hi]`. Values
/// outside the range go to the end bins, so every value is counted once.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 {
        return counts;
    }
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let k = ((v - lo) / width).floor();
        let k = if k.is_nan() || k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
        counts[k] += 1;
    }
    counts
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn axes(svg: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(svg, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(svg, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"12\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 12 {})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn legend(svg: &mut String, entries: &[(&str, &str)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let _ = writeln!(svg, "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>", WIDTH - 120.0, y - 9.0);
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{y}\" font-size=\"11\">{}</text>", WIDTH - 105.0, escape(name));
    }
}

/// Side-by-side bars of the death and release histograms of `d(x)`.
pub fn histogram_svg(death: &[usize], release: &[usize]) -> String {
    let bins = death.len().max(1);
    let peak = death.iter().chain(release).copied().max().unwrap_or(0).max(1) as f64;
    let mut svg = svg_open("Squared norm by outcome");
    axes(&mut svg, "d(x)", "states");
    let slot = (WIDTH - 2.0 * MARGIN) / bins as f64;
    for (side, counts) in [death, release].iter().enumerate() {
        for (k, &c) in counts.iter().enumerate() {
            let h = (HEIGHT - 2.0 * MARGIN) * c as f64 / peak;
            let x = MARGIN + slot * k as f64 + slot / 2.0 * side as f64;
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\"/>",
                HEIGHT - MARGIN - h,
                slot / 2.0,
                OUTCOME_COLORS[side]
            );
        }
    }
    legend(&mut svg, &[("death", OUTCOME_COLORS[0]), ("release", OUTCOME_COLORS[1])]);
    svg.push_str("</svg>\n");
    svg
}

fn to_plot(v: f64) -> (f64, f64) {
    let half = (HEIGHT - 2.0 * MARGIN) / 2.0;
    (half, v * half)
}

/// Orthographic projection onto the first two embedding axes. Points are
/// `(x, y, color)` with coordinates in `[-1, 1]`.
pub fn projection_svg(title: &str, points: &[(f64, f64, &str)], legend_entries: &[(&str, &str)]) -> String {
    let mut svg = svg_open(title);
    let (cx, cy) = (WIDTH / 2.0, HEIGHT / 2.0 + 5.0);
    let (r, _) = to_plot(1.0);
    let _ = writeln!(svg, "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{r:.2}\" fill=\"none\" stroke=\"#888\"/>");
    for (x, y, color) in points {
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"{color}\" fill-opacity=\"0.6\"/>",
            cx + to_plot(*x).1,
            cy - to_plot(*y).1
        );
    }
    legend(&mut svg, legend_entries);
    svg.push_str("</svg>\n");
    svg
}

/// Mean `d(x)` against hours before the terminal event, one line per outcome.
pub fn curve_svg(curve: &TimeToEventCurve, max_hours: usize) -> String {
    let mut svg = svg_open("Mean squared norm by time to event");
    axes(&mut svg, "hours before terminal state", "mean d(x)");
    let sx = (WIDTH - 2.0 * MARGIN) / max_hours.max(1) as f64;
    let sy = HEIGHT - 2.0 * MARGIN;
    for (side, outcome) in [Outcome::Death, Outcome::Release].into_iter().enumerate() {
        let pts: Vec<String> = curve
            .bins(outcome)
            .iter()
            .map(|b| format!("{:.2},{:.2}", MARGIN + sx * b.lag as f64, HEIGHT - MARGIN - sy * b.mean.clamp(0.0, 1.0)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
                pts.join(" "),
                OUTCOME_COLORS[side]
            );
        }
    }
    legend(&mut svg, &[("death", OUTCOME_COLORS[0]), ("release", OUTCOME_COLORS[1])]);
    svg.push_str("</svg>\n");
    svg
}

fn first_two<T: Scalar>(row: &[T]) -> (f64, f64) {
    let x = row.first().map_or(0.0, |v| v.to_f64_lossy());
    let y = row.get(1).map_or(0.0, |v| v.to_f64_lossy());
    (x, y)
}

fn norm_color(d: f64) -> String {
    let t = d.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

fn write_file(out_dir: &Path, name: String, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    let path = out_dir.join(name);
    checkpoint::write_atomic(&path, bytes)?;
    written.push(path);
    Ok(())
}

/// Writes histogram, time-to-event and projection tables and figures for the
/// embeddings of `cohort` into `out_dir`; returns the paths written.
pub fn export_report<T: Scalar>(
    cohort: &Cohort,
    embeddings: &[Tensor<T>],
    options: &ReportOptions,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if embeddings.len() != cohort.len() {
        return Err(Error::shape("export_report embeddings", cohort.len(), embeddings.len()));
    }
    fs::create_dir_all(out_dir)?;
    let tag = &options.tag;
    let mut written = Vec::new();
    let risk: Vec<Vec<f64>> = embeddings.iter().map(row_norms_sq).collect();

    let by_outcome = |o: Outcome| -> Vec<f64> {
        risk.iter()
            .zip(&cohort.patients)
            .filter(|(_, p)| p.outcome == o)
            .flat_map(|(d, _)| d.iter().copied())
            .collect()
    };
    let bins = options.histogram_bins.max(1);
    let death = histogram(&by_outcome(Outcome::Death), bins, 0.0, 1.0);
    let release = histogram(&by_outcome(Outcome::Release), bins, 0.0, 1.0);
    let mut csv = String::from("bin_lo,bin_hi,death,release\n");
    for k in 0..bins {
        let _ = writeln!(csv, "{},{},{},{}", k as f64 / bins as f64, (k + 1) as f64 / bins as f64, death[k], release[k]);
    }
    write_file(out_dir, format!("norm_histogram_{tag}.csv"), csv.as_bytes(), &mut written)?;
    write_file(out_dir, format!("norm_histogram_{tag}.svg"), histogram_svg(&death, &release).as_bytes(), &mut written)?;

    let curve = time_to_event_curve(&risk, cohort, options.max_hours)?;
    let mut csv = String::from("outcome,lag,mean_d,count\n");
    for o in [Outcome::Death, Outcome::Release] {
        for b in curve.bins(o) {
            let _ = writeln!(csv, "{},{},{},{}", o.as_str(), b.lag, b.mean, b.count);
        }
    }
    write_file(out_dir, format!("time_to_event_{tag}.csv"), csv.as_bytes(), &mut written)?;
    write_file(out_dir, format!("time_to_event_{tag}.svg"), curve_svg(&curve, options.max_hours).as_bytes(), &mut written)?;

    let (vectors, labels) = near_death_embeddings(embeddings, cohort, options.separation_window);
    let mut csv = String::from("x,y,organ\n");
    let mut points = Vec::with_capacity(vectors.len());
    for (v, l) in vectors.iter().zip(&labels) {
        let (x, y) = first_two(v);
        let _ = writeln!(csv, "{x},{y},{}", l.name());
        points.push((x, y, ORGAN_COLORS[l.index()]));
    }
    let organ_legend: Vec<(&str, &str)> = OrganLabel::ALL.iter().map(|l| (l.name(), ORGAN_COLORS[l.index()])).collect();
    write_file(out_dir, format!("projection_organ_{tag}.csv"), csv.as_bytes(), &mut written)?;
    write_file(
        out_dir,
        format!("projection_organ_{tag}.svg"),
        projection_svg("Near-death non-survivor states by worst organ", &points, &organ_legend).as_bytes(),
        &mut written,
    )?;

    let total: usize = embeddings.iter().map(|e| e.shape()[0]).sum();
    let stride = total.div_ceil(MAX_POINTS).max(1);
    let colored: Vec<(f64, f64, String)> = embeddings
        .iter()
        .flat_map(|e| (0..e.shape()[0]).map(move |r| e.row(r)))
        .step_by(stride)
        .map(|row| {
            let (x, y) = first_two(row);
            let d: f64 = row.iter().map(|v| v.to_f64_lossy().powi(2)).sum();
            (x, y, norm_color(d))
        })
        .collect();
    let points: Vec<(f64, f64, &str)> = colored.iter().map(|(x, y, c)| (*x, *y, c.as_str())).collect();
    let norm_legend = [("d = 0", "#0040ff"), ("d = 1", "#ff4000")];
    write_file(
        out_dir,
        format!("projection_norm_{tag}.svg"),
        projection_svg("All states colored by squared norm", &points, &norm_legend).as_bytes(),
        &mut written,
    )?;
    Ok(written)
}
