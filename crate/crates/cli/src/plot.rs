//! SVG chart emission from trial logs.
//!
//! For every scenario present in a batch this module renders three line
//! charts — RMSE, mean posterior variance, and cumulative distance against
//! simulated time, one series per variant — plus a heatmap triple showing
//! the ground-truth field next to the final predicted mean and variance of
//! the scenario's first run. Everything is written as standalone SVG with
//! no rendering dependencies.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

use infosample::sim::TrialLog;

/// Distinguishable series colors; one per variant in manifest order.
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

const CHART_W: f64 = 880.0;
const CHART_H: f64 = 520.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 190.0;
const MARGIN_T: f64 = 46.0;
const MARGIN_B: f64 = 58.0;

/// One metric extracted from step records.
#[derive(Debug, Clone, Copy)]
enum Metric {
    Rmse,
    MeanVariance,
    Distance,
}

impl Metric {
    fn of(&self, r: &infosample::StepRecord) -> f64 {
        match self {
            Metric::Rmse => r.rmse,
            Metric::MeanVariance => r.mean_var,
            Metric::Distance => r.cum_dist_m,
        }
    }

    fn title(&self) -> &'static str {
        match self {
            Metric::Rmse => "RMSE vs time",
            Metric::MeanVariance => "Mean posterior variance vs time",
            Metric::Distance => "Cumulative distance vs time",
        }
    }

    fn y_label(&self) -> &'static str {
        match self {
            Metric::Rmse => "RMSE (dB)",
            Metric::MeanVariance => "variance (dB^2)",
            Metric::Distance => "distance (m)",
        }
    }

    fn file_tag(&self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::MeanVariance => "variance",
            Metric::Distance => "distance",
        }
    }
}

/// Renders all charts for `logs` into `dir` and returns the files written.
pub fn emit_plots(logs: &[TrialLog], dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    anyhow::ensure!(!logs.is_empty(), "no logs to plot");
    fs::create_dir_all(dir)
        .with_context(|| format!("creating plot directory {}", dir.display()))?;
    let mut written = Vec::new();

    let mut scenarios: Vec<&str> = Vec::new();
    for log in logs {
        let s = log.config.scenario.label();
        if !scenarios.contains(&s) {
            scenarios.push(s);
        }
    }

    for scenario in scenarios {
        let scenario_logs: Vec<&TrialLog> = logs
            .iter()
            .filter(|l| l.config.scenario.label() == scenario)
            .collect();

        // Variant order follows first appearance in the batch.
        let mut variants: Vec<String> = Vec::new();
        for log in &scenario_logs {
            let v = log.config.strategy.label();
            if !variants.contains(&v) {
                variants.push(v);
            }
        }

        for metric in [Metric::Rmse, Metric::MeanVariance, Metric::Distance] {
            let mut series = Vec::new();
            for v in &variants {
                let runs: Vec<&TrialLog> = scenario_logs
                    .iter()
                    .copied()
                    .filter(|l| l.config.strategy.label() == *v)
                    .collect();
                if let Some(points) = mean_series(&runs, metric) {
                    series.push((v.clone(), points));
                }
            }
            let svg = line_chart(
                &format!("{scenario}: {}", metric.title()),
                metric.y_label(),
                &series,
            );
            let path = dir.join(format!("plot_{scenario}_{}.svg", metric.file_tag()));
            fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }

        let heat = heatmap_triple(scenario_logs[0]);
        let path = dir.join(format!("heatmap_{scenario}.svg"));
        fs::write(&path, heat).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

/// Cross-run mean of one metric on a 1 s time grid.
///
/// Each run is stepped forward with last-value-carry-forward; the grid
/// starts at the latest first-sample time and ends at the earliest final
/// time so every run contributes to every plotted point. Averaging over a
/// fixed set of runs keeps monotone inputs (such as cumulative distance)
/// monotone in the output.
fn mean_series(runs: &[&TrialLog], metric: Metric) -> Option<Vec<(f64, f64)>> {
    let live: Vec<&&TrialLog> = runs.iter().filter(|l| !l.records.is_empty()).collect();
    if live.is_empty() {
        return None;
    }
    let t_start = live
        .iter()
        .map(|l| l.records[0].time_s)
        .fold(f64::NEG_INFINITY, f64::max);
    let t_end = live
        .iter()
        .map(|l| l.records.last().unwrap().time_s)
        .fold(f64::INFINITY, f64::min);
    if t_end < t_start {
        return None;
    }
    let mut points = Vec::new();
    let mut t = t_start.ceil();
    if t < t_start {
        t = t_start;
    }
    let mut cursors = vec![0usize; live.len()];
    while t <= t_end {
        let mut sum = 0.0;
        for (log, cursor) in live.iter().zip(cursors.iter_mut()) {
            while *cursor + 1 < log.records.len() && log.records[*cursor + 1].time_s <= t {
                *cursor += 1;
            }
            sum += metric.of(&log.records[*cursor]);
        }
        points.push((t, sum / live.len() as f64));
        t += 1.0;
    }
    if points.is_empty() {
        // Degenerate sub-second window; fall back to the window edges.
        let mut sum = 0.0;
        for log in &live {
            let r = log
                .records
                .iter()
                .rev()
                .find(|r| r.time_s <= t_end)
                .unwrap_or(&log.records[0]);
            sum += metric.of(r);
        }
        points.push((t_end, sum / live.len() as f64));
    }
    Some(points)
}

/// Rounds axis bounds outward to a human-friendly step.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw_step = span / target as f64;
    let mag = 10f64.powf(raw_step.log10().floor());
    let norm = raw_step / mag;
    let step = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    } * mag;
    let first = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut v = first;
    let eps = span * 1e-9;
    while v <= hi + eps {
        if v >= lo - eps {
            ticks.push(v);
        }
        v += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1000.0 {
        format!("{v:.0}")
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

/// Renders one multi-series line chart.
fn line_chart(title: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let plot_w = CHART_W - MARGIN_L - MARGIN_R;
    let plot_h = CHART_H - MARGIN_T - MARGIN_B;

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, pts) in series {
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if (x_max - x_min).abs() < 1e-9 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-9 {
        y_max = y_min + 1.0;
    }
    // A little headroom so lines do not hug the frame.
    let y_pad = (y_max - y_min) * 0.04;
    let (y_lo, y_hi) = (y_min - y_pad, y_max + y_pad);

    let sx = move |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = move |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CHART_W}" height="{CHART_H}" viewBox="0 0 {CHART_W} {CHART_H}" font-family="sans-serif">
<rect width="{CHART_W}" height="{CHART_H}" fill="white"/>
<text x="{tx}" y="26" font-size="17" text-anchor="middle">{title}</text>
"#,
        tx = MARGIN_L + plot_w / 2.0,
        title = xml_escape(title),
    );

    // Frame.
    let _ = write!(
        svg,
        r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333" stroke-width="1"/>
"##
    );

    for t in nice_ticks(x_min, x_max, 6) {
        let x = sx(t);
        let _ = write!(
            svg,
            concat!(
                r##"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{y1:.1}" stroke="#ccc" stroke-width="0.6"/>"##,
                "\n",
                r#"<text x="{x:.1}" y="{ty:.1}" font-size="12" text-anchor="middle">{label}</text>"#,
                "\n"
            ),
            x = x,
            y0 = MARGIN_T,
            y1 = MARGIN_T + plot_h,
            ty = MARGIN_T + plot_h + 18.0,
            label = fmt_tick(t),
        );
    }
    for t in nice_ticks(y_lo, y_hi, 6) {
        let y = sy(t);
        let _ = write!(
            svg,
            concat!(
                r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#ccc" stroke-width="0.6"/>"##,
                "\n",
                r#"<text x="{tx:.1}" y="{ty:.1}" font-size="12" text-anchor="end">{label}</text>"#,
                "\n"
            ),
            x0 = MARGIN_L,
            x1 = MARGIN_L + plot_w,
            y = y,
            tx = MARGIN_L - 8.0,
            ty = y + 4.0,
            label = fmt_tick(t),
        );
    }

    // Axis labels.
    let _ = write!(
        svg,
        concat!(
            r#"<text x="{lx:.1}" y="{ly:.1}" font-size="13" text-anchor="middle">time (s)</text>"#,
            "\n",
            r#"<text x="18" y="{my:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {my:.1})">{yl}</text>"#,
            "\n"
        ),
        lx = MARGIN_L + plot_w / 2.0,
        ly = CHART_H - 16.0,
        my = MARGIN_T + plot_h / 2.0,
        yl = xml_escape(y_label),
    );

    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut attr = String::new();
        for &(x, y) in pts {
            let _ = write!(attr, "{:.1},{:.1} ", sx(x), sy(y));
        }
        let _ = write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\" points=\"{}\"/>\n",
            attr.trim_end(),
        );
        // Legend entry.
        let ly = MARGIN_T + 14.0 + i as f64 * 20.0;
        let lx = MARGIN_L + plot_w + 14.0;
        let _ = write!(
            svg,
            concat!(
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{lx2:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2.4"/>"#,
                "\n",
                r#"<text x="{tx:.1}" y="{ty:.1}" font-size="13" class="legend">{name}</text>"#,
                "\n"
            ),
            lx = lx,
            lx2 = lx + 26.0,
            ly = ly,
            color = color,
            tx = lx + 32.0,
            ty = ly + 4.5,
            name = xml_escape(name),
        );
    }

    svg.push_str("</svg>\n");
    svg
}

/// Three heatmap panels from one run: frozen ground truth, final predicted
/// mean (same color scale), and final predictive variance (its own scale).
fn heatmap_triple(log: &TrialLog) -> String {
    let grid = &log.config.grid;
    let nx = grid.nx();
    let ny = grid.ny();
    let cell = 22.0;
    let panel_w = nx as f64 * cell;
    let panel_h = ny as f64 * cell;
    let pad = 56.0;
    let top = 56.0;
    let width = pad + 3.0 * panel_w + 2.0 * pad + pad;
    let height = top + panel_h + 64.0;

    let (t_lo, t_hi) = shared_range(&[&log.truth_dbm, &log.final_mean_dbm]);
    let (v_lo, v_hi) = shared_range(&[&log.final_variance]);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">
<rect width="{width}" height="{height}" fill="white"/>
<text x="{cx}" y="26" font-size="16" text-anchor="middle">{title}</text>
"#,
        cx = width / 2.0,
        title = xml_escape(&format!(
            "{} / {}: ground truth vs final estimate",
            log.config.scenario.label(),
            log.config.strategy.label()
        )),
    );

    let panels: [(&str, &[f64], f64, f64); 3] = [
        ("ground truth (dBm)", &log.truth_dbm, t_lo, t_hi),
        ("predicted mean (dBm)", &log.final_mean_dbm, t_lo, t_hi),
        ("predictive variance", &log.final_variance, v_lo, v_hi),
    ];

    for (p, (label, values, lo, hi)) in panels.iter().enumerate() {
        let x0 = pad + p as f64 * (panel_w + pad);
        let _ = write!(
            svg,
            "<text x=\"{tx:.1}\" y=\"{ty:.1}\" font-size=\"13\" text-anchor=\"middle\">{label}</text>\n",
            tx = x0 + panel_w / 2.0,
            ty = top - 10.0,
            label = xml_escape(label),
        );
        for iy in 0..ny {
            for ix in 0..nx {
                // Row 0 of the grid is drawn at the bottom, matching the
                // survey coordinate frame.
                let v = values[iy * nx + ix];
                let y = top + (ny - 1 - iy) as f64 * cell;
                let _ = write!(
                    svg,
                    "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"{c}\"/>\n",
                    x = x0 + ix as f64 * cell,
                    y = y,
                    c = color_of((v - lo) / (hi - lo).max(1e-12)),
                );
            }
        }
        let _ = write!(
            svg,
            "<text x=\"{tx:.1}\" y=\"{ty:.1}\" font-size=\"11\" text-anchor=\"middle\">min {lo:.1}   max {hi:.1}</text>\n",
            tx = x0 + panel_w / 2.0,
            ty = top + panel_h + 20.0,
        );
    }

    // Mark the true source on the first two panels.
    let src = log.config.field.source;
    for p in 0..2 {
        let x0 = pad + p as f64 * (panel_w + pad);
        let cx = x0 + (src.x / grid.cell_pitch_m + 0.5) * cell;
        let cy = top + panel_h - (src.y / grid.cell_pitch_m + 0.5) * cell;
        let _ = write!(
            svg,
            "<circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"5\" fill=\"none\" stroke=\"white\" stroke-width=\"2\"/>\n",
        );
    }

    svg.push_str("</svg>\n");
    svg
}

fn shared_range(sets: &[&[f64]]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in sets {
        for &v in *s {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

/// Cold-to-hot color ramp: dark blue → cyan → yellow → red.
fn color_of(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let stops: [(f64, [u8; 3]); 4] = [
        (0.0, [13, 8, 135]),
        (0.35, [70, 160, 246]),
        (0.7, [248, 222, 73]),
        (1.0, [208, 28, 28]),
    ];
    let mut rgb = stops[stops.len() - 1].1;
    for w in stops.windows(2) {
        let (a, ca) = w[0];
        let (b, cb) = w[1];
        if t <= b {
            let f = if b > a { (t - a) / (b - a) } else { 0.0 };
            rgb = [
                (ca[0] as f64 + f * (cb[0] as f64 - ca[0] as f64)).round() as u8,
                (ca[1] as f64 + f * (cb[1] as f64 - ca[1] as f64)).round() as u8,
                (ca[2] as f64 + f * (cb[2] as f64 - ca[2] as f64)).round() as u8,
            ];
            break;
        }
    }
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use infosample::acquisition::InfoVariant;
    use infosample::sim::{run_trial, Scenario, ScenarioConfig};
    use infosample::Point;

    fn quick_logs(variants: &[InfoVariant], trials: u32) -> Vec<TrialLog> {
        let mut logs = Vec::new();
        for v in variants {
            let mut sc = ScenarioConfig::new(Scenario::WalkSingle, v.clone());
            sc.sources = vec![Point::new(4.0, 7.0)];
            sc.trials = trials;
            sc.robot.budget_s = 40.0;
            for cfg in sc.expand().unwrap() {
                logs.push(run_trial(&cfg).unwrap());
            }
        }
        logs
    }

    /// Pulls every polyline's point list out of an SVG body.
    fn polyline_points(svg: &str) -> Vec<Vec<(f64, f64)>> {
        let mut out = Vec::new();
        for chunk in svg.split("<polyline").skip(1) {
            let points = chunk.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
            let pts = points
                .split_whitespace()
                .map(|p| {
                    let (x, y) = p.split_once(',').unwrap();
                    (x.parse::<f64>().unwrap(), y.parse::<f64>().unwrap())
                })
                .collect();
            out.push(pts);
        }
        out
    }

    #[test]
    fn single_variant_single_trial_gives_three_charts_with_one_polyline() {
        let dir = tempfile::tempdir().unwrap();
        let logs = quick_logs(&[InfoVariant::max_var()], 1);
        let files = emit_plots(&logs, dir.path()).unwrap();
        let charts: Vec<_> = files
            .iter()
            .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("plot_"))
            .collect();
        assert_eq!(charts.len(), 3);
        for chart in charts {
            let svg = fs::read_to_string(chart).unwrap();
            assert_eq!(polyline_points(&svg).len(), 1, "{}", chart.display());
        }
        // Plus the heatmap triple.
        assert!(files.iter().any(|p| p.file_name().unwrap().to_string_lossy().starts_with("heatmap_")));
    }

    #[test]
    fn legend_lists_every_variant() {
        let dir = tempfile::tempdir().unwrap();
        let variants = [
            InfoVariant::max_mean(),
            InfoVariant::alpha75(),
            InfoVariant::alpha50(),
            InfoVariant::alpha25(),
            InfoVariant::max_var(),
            InfoVariant::max_var_max_mean(5.0).unwrap(),
            InfoVariant::RandomWalk,
        ];
        let logs = quick_logs(&variants, 1);
        let files = emit_plots(&logs, dir.path()).unwrap();
        let chart = files
            .iter()
            .find(|p| p.file_name().unwrap().to_string_lossy().contains("rmse"))
            .unwrap();
        let svg = fs::read_to_string(chart).unwrap();
        let legend_entries = svg.matches("class=\"legend\"").count();
        assert_eq!(legend_entries, 7);
        assert_eq!(polyline_points(&svg).len(), 7);
        for name in ["MaxMean", "Alpha75", "Alpha50", "Alpha25", "MaxVar", "MaxVarMaxMean", "RandomWalk"] {
            assert!(svg.contains(name), "legend lacks {name}");
        }
    }

    #[test]
    fn distance_chart_series_is_monotone_nondecreasing() {
        let dir = tempfile::tempdir().unwrap();
        let logs = quick_logs(&[InfoVariant::alpha50(), InfoVariant::max_var()], 2);
        let files = emit_plots(&logs, dir.path()).unwrap();
        let chart = files
            .iter()
            .find(|p| p.file_name().unwrap().to_string_lossy().contains("distance"))
            .unwrap();
        let svg = fs::read_to_string(chart).unwrap();
        let polylines = polyline_points(&svg);
        assert!(!polylines.is_empty());
        for pts in polylines {
            for w in pts.windows(2) {
                // Larger values sit higher on the chart, i.e. smaller pixel y.
                assert!(w[1].1 <= w[0].1 + 1e-9, "distance series decreased: {w:?}");
                assert!(w[1].0 >= w[0].0, "x must advance");
            }
        }
    }
}
