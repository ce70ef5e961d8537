//! Output files: per-run CSV logs, the RMSE series, text summaries and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use plotters::prelude::*;

use super::campaign::{Campaign, RmseSeries, Stats, AXIS_LABELS};
use super::trial::RunResult;
use crate::error::{Error, Result};
use crate::mmae::StrategyKind;
use crate::sensors::NoiseKind;

/// Column order of every per-run CSV. Vectors are expanded `x, y, z`; quaternions
/// `x, y, z, s` (scalar last). Angles in rad, rates in rad/s, time in s.
#[rustfmt::skip]
pub const RUN_CSV_COLUMNS: [&str; 54] = [
    "t",
    "q_true_x", "q_true_y", "q_true_z", "q_true_s",
    "q_est_x", "q_est_y", "q_est_z", "q_est_s",
    "omega_true_x", "omega_true_y", "omega_true_z",
    "omega_est_x", "omega_est_y", "omega_est_z",
    "bias_true_x", "bias_true_y", "bias_true_z",
    "bias_est_x", "bias_est_y", "bias_est_z",
    "mu_true_x", "mu_true_y", "mu_true_z",
    "mu_est_x", "mu_est_y", "mu_est_z",
    "att_err_x", "att_err_y", "att_err_z",
    "omega_err_x", "omega_err_y", "omega_err_z",
    "bias_err_x", "bias_err_y", "bias_err_z",
    "mu_err_x", "mu_err_y", "mu_err_z",
    "sigma_att_x", "sigma_att_y", "sigma_att_z",
    "sigma_omega_x", "sigma_omega_y", "sigma_omega_z",
    "sigma_bias_x", "sigma_bias_y", "sigma_bias_z",
    "mu_spread_x", "mu_spread_y", "mu_spread_z",
    "psi", "hypotheses", "max_weight",
];

/// Trailing column of the per-run CSV: 1 on steps where the lattice was refined.
pub const RUN_CSV_REFINED: &str = "refined";

pub const RMSE_CSV_COLUMNS: [&str; 5] = ["t", "xi_q", "xi_omega", "xi_bias", "xi_mu"];

/// Files written by [`emit_artifacts`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArtifactPaths {
    pub runs: Vec<PathBuf>,
    pub rmse: PathBuf,
    pub summary: PathBuf,
    pub plots: Vec<PathBuf>,
}

fn push3(row: &mut Vec<String>, v: &Vector3<f64>) {
    row.extend(v.iter().map(|x| x.to_string()));
}

pub fn write_run_csv(result: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut header: Vec<&str> = RUN_CSV_COLUMNS.to_vec();
    header.push(RUN_CSV_REFINED);
    w.write_record(&header)?;
    for rec in &result.records {
        let mut row = Vec::with_capacity(header.len());
        row.push(rec.t.to_string());
        row.extend(rec.q_true.to_array().iter().map(|x| x.to_string()));
        row.extend(rec.q_est.to_array().iter().map(|x| x.to_string()));
        for v in [
            rec.omega_true,
            rec.omega_est,
            result.bias_true,
            rec.bias_est,
            result.mu_true,
            rec.mu_est,
            rec.attitude_error,
            rec.omega_error(),
            rec.bias_error(result),
            rec.mu_error(result),
            rec.sigma_attitude,
            rec.sigma_omega,
            rec.sigma_bias,
            rec.mu_spread,
        ] {
            push3(&mut row, &v);
        }
        row.push(rec.psi.to_string());
        row.push(rec.hypotheses.to_string());
        row.push(rec.max_weight.to_string());
        row.push(u8::from(rec.refined).to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_rmse_csv(rmse: &RmseSeries, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_record(RMSE_CSV_COLUMNS)?;
    for k in 0..rmse.t.len() {
        w.write_record(
            [
                rmse.t[k],
                rmse.q[k],
                rmse.omega[k],
                rmse.bias[k],
                rmse.mu[k],
            ]
            .map(|x| x.to_string()),
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Four significant digits in scientific notation.
pub fn sig4(x: f64) -> String {
    format!("{x:.3e}")
}

fn mean_final(c: &Campaign, f: impl Fn(&RunResult) -> Vector3<f64>) -> Vector3<f64> {
    let n = c.successful().count().max(1) as f64;
    c.successful().fold(Vector3::zeros(), |acc, r| acc + f(r)) / n
}

/// Campaign summary: final-error statistics, per-axis mean errors, refinement and
/// consistency figures.
pub fn summary_text(c: &Campaign) -> String {
    let cfg = &c.config;
    let mut s = String::new();
    let t_end = c.rmse.t.last().copied().unwrap_or(0.0);
    let _ = writeln!(s, "Campaign summary");
    let _ = writeln!(
        s,
        "runs {} (failed {}), seed {}, strategy {}, mode {:?}, noise {:?}, t_end {} s",
        cfg.n_runs,
        c.failures(),
        cfg.seed,
        cfg.strategy.kind.slug(),
        cfg.filter.mode,
        cfg.sensors.noise.kind,
        t_end
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "Final errors at t = {t_end} s");
    let _ = writeln!(
        s,
        "{:<32} {:<10} {:>14}",
        "Error metric", "Statistic", "Value"
    );
    let rows: [(&str, Stats, bool); 3] = [
        ("Attitude error (deg)", c.final_attitude_error_deg(), true),
        (
            "Angular velocity error (rad/s)",
            c.final_rate_error(),
            false,
        ),
        ("Gyro bias error (rad/s)", c.final_bias_error(), false),
    ];
    for (name, st, with_max) in rows {
        let _ = writeln!(s, "{:<32} {:<10} {:>14}", name, "Mean", sig4(st.mean));
        let _ = writeln!(s, "{:<32} {:<10} {:>14}", "", "Std. Dev.", sig4(st.std));
        if with_max {
            let _ = writeln!(s, "{:<32} {:<10} {:>14}", "", "Max", sig4(st.max));
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Final mean signed errors per axis");
    let axes = [
        (
            "Attitude error (deg)",
            mean_final(c, |r| r.last().attitude_error.map(f64::to_degrees)),
        ),
        (
            "Angular velocity error (rad/s)",
            mean_final(c, |r| r.last().omega_error()),
        ),
        (
            "Gyro bias error (rad/s)",
            mean_final(c, |r| r.last().bias_error(r)),
        ),
        (
            "Misalignment error (deg)",
            mean_final(c, |r| r.last().mu_error(r).map(f64::to_degrees)),
        ),
    ];
    let _ = writeln!(
        s,
        "{:<32} {:>14} {:>14} {:>14}",
        "Error metric", "X", "Y", "Z"
    );
    for (name, v) in axes {
        let _ = writeln!(
            s,
            "{:<32} {:>14} {:>14} {:>14}",
            name,
            sig4(v.x),
            sig4(v.y),
            sig4(v.z)
        );
    }
    let _ = writeln!(s);
    let refs = c.refinements();
    let _ = writeln!(s, "Average refinements        {:.2}", refs.mean);
    let _ = writeln!(
        s,
        "Final Xi_q                 {}",
        sig4(c.rmse.q.last().copied().unwrap_or(f64::NAN))
    );
    let _ = writeln!(
        s,
        "Final Xi_omega (rad/s)     {}",
        sig4(c.rmse.omega.last().copied().unwrap_or(f64::NAN))
    );
    let _ = writeln!(
        s,
        "Final Xi_b (rad/s)         {}",
        sig4(c.rmse.bias.last().copied().unwrap_or(f64::NAN))
    );
    let _ = writeln!(s, "Final Xi_mu (rad)          {}", sig4(c.final_mu_rmse()));
    let _ = writeln!(s);
    let cons = c.consistency();
    let _ = writeln!(s, "3-sigma containment over {} samples", cons.samples);
    for (label, frac) in AXIS_LABELS.iter().zip(cons.containment) {
        let _ = writeln!(s, "  {label:<12} {:.4}", frac);
    }
    let fusions: usize = c.results.iter().map(|r| r.degenerate_fusions).sum();
    if fusions > 0 {
        let _ = writeln!(s, "Degenerate fusion steps    {fusions}");
    }
    for r in c.results.iter().filter(|r| !r.succeeded()) {
        let _ = writeln!(
            s,
            "Trial {} failed: {}",
            r.trial,
            r.failure.as_deref().unwrap_or("")
        );
    }
    s
}

/// Average refinement count and final Ξ_μ for each strategy.
pub fn strategy_table(rows: &[(StrategyKind, &Campaign)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<40} {:>20} {:>18}",
        "Strategy", "Average refinements", "Final Xi_mu (rad)"
    );
    for (kind, c) in rows {
        let _ = writeln!(
            s,
            "{:<40} {:>20.2} {:>18}",
            kind.label(),
            c.refinements().mean,
            sig4(c.final_mu_rmse())
        );
    }
    s
}

/// Final attitude error statistics for each noise model.
pub fn noise_table(rows: &[(NoiseKind, &Campaign)]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<26}", "Metric");
    for (kind, _) in rows {
        let _ = write!(s, " {:>16}", format!("{kind:?}"));
    }
    let _ = writeln!(s);
    let stats: Vec<Stats> = rows
        .iter()
        .map(|(_, c)| c.final_attitude_error_deg())
        .collect();
    for (name, pick) in [
        (
            "Mean final error (deg)",
            (|st: &Stats| st.mean) as fn(&Stats) -> f64,
        ),
        ("Std final error (deg)", |st| st.std),
        ("Max final error (deg)", |st| st.max),
    ] {
        let _ = write!(s, "{name:<26}");
        for st in &stats {
            let _ = write!(s, " {:>16.4}", pick(st));
        }
        let _ = writeln!(s);
    }
    s
}

/// Writes `runs/run_NNN.csv`, `rmse.csv`, `summary.txt` and the SVG plots into `out`.
pub fn emit_artifacts(c: &Campaign, out: &Path) -> Result<ArtifactPaths> {
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let mut paths = ArtifactPaths::default();
    for r in &c.results {
        let p = runs_dir.join(format!("run_{:03}.csv", r.trial));
        write_run_csv(r, &p)?;
        paths.runs.push(p);
    }
    paths.rmse = out.join("rmse.csv");
    write_rmse_csv(&c.rmse, &paths.rmse)?;
    paths.summary = out.join("summary.txt");
    fs::write(&paths.summary, summary_text(c)).map_err(|e| Error::io(&paths.summary, e))?;

    let rmse_svg = out.join("rmse.svg");
    plot_rmse(&c.rmse, &rmse_svg)?;
    paths.plots.push(rmse_svg);
    if let Some(first) = c.successful().next() {
        let psi_svg = out.join("psi.svg");
        plot_psi(first, c.config.strategy.psi_threshold, &psi_svg)?;
        paths.plots.push(psi_svg);
        let err_svg = out.join("errors.svg");
        plot_errors(first, &err_svg)?;
        paths.plots.push(err_svg);
    }
    let hist_svg = out.join("refinements.svg");
    let t_end = c.rmse.t.last().copied().unwrap_or(c.config.dynamics.t_end);
    plot_refinement_histogram(&c.results, t_end, &hist_svg)?;
    paths.plots.push(hist_svg);
    Ok(paths)
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// At most `max` evenly spaced indices so long runs keep the SVGs small.
fn decimate(len: usize, max: usize) -> impl Iterator<Item = usize> {
    let stride = len.div_ceil(max.max(1)).max(1);
    (0..len)
        .step_by(stride)
        .chain((len > 0 && !(len - 1).is_multiple_of(stride)).then(|| len - 1))
}

fn positive_range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values
        .filter(|v| v.is_finite() && *v > 0.0)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return 1e-12..1.0;
    }
    let hi = if hi > lo { hi } else { lo * 10.0 };
    lo * 0.8..hi * 1.25
}

fn log_panel(
    area: &DrawingArea<SVGBackend<'_>, plotters::coord::Shift>,
    title: &str,
    series: &[(&str, &[f64], &[f64])],
    t_end: f64,
) -> Result<()> {
    let range = positive_range(series.iter().flat_map(|(_, _, y)| y.iter().copied()));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 16))
        .margin(8)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..t_end.max(1e-9), range.log_scale())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("t (s)")
        .y_label_formatter(&|y| format!("{y:.0e}"))
        .draw()
        .map_err(plot_err)?;
    let palette = [&BLUE, &RED, &GREEN, &MAGENTA];
    for (i, (label, t, y)) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let pts = decimate(t.len(), 2000)
            .filter(|&k| y[k] > 0.0)
            .map(|k| (t[k], y[k]));
        let drawn = chart
            .draw_series(LineSeries::new(pts, color))
            .map_err(plot_err)?;
        if series.len() > 1 {
            drawn
                .label(*label)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        }
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    Ok(())
}

/// Four log-scale panels: Ξ_q, Ξ_ω, Ξ_b, Ξ_μ against time.
pub fn plot_rmse(rmse: &RmseSeries, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (1100, 800)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let t_end = rmse.t.last().copied().unwrap_or(1.0);
    let panels = root.split_evenly((2, 2));
    let data: [(&str, &[f64]); 4] = [
        ("Attitude RMSE (quaternion)", &rmse.q),
        ("Angular velocity RMSE (rad/s)", &rmse.omega),
        ("Gyro bias RMSE (rad/s)", &rmse.bias),
        ("Misalignment RMSE (rad)", &rmse.mu),
    ];
    for (area, (title, y)) in panels.iter().zip(data) {
        log_panel(area, title, &[(title, &rmse.t, y)], t_end)?;
    }
    root.present().map_err(plot_err)
}

/// Ξ_μ of several campaigns overlaid, one curve per label.
pub fn plot_mu_comparison(series: &[(&str, &RmseSeries)], path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let t_end = series
        .iter()
        .filter_map(|(_, r)| r.t.last().copied())
        .fold(0.0, f64::max);
    let curves: Vec<(&str, &[f64], &[f64])> = series
        .iter()
        .map(|(l, r)| (*l, r.t.as_slice(), r.mu.as_slice()))
        .collect();
    log_panel(&root, "Misalignment RMSE (rad)", &curves, t_end)?;
    root.present().map_err(plot_err)
}

/// Ψ against time for one run, with the trigger threshold and refinement instants.
pub fn plot_psi(run: &RunResult, threshold: f64, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (900, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let t_end = run.records.last().map_or(1.0, |r| r.t);
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("Hypothesis diversity, trial {}", run.trial),
            ("sans-serif", 18),
        )
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..t_end, 0.0..105.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("t (s)")
        .y_desc("Psi (%)")
        .draw()
        .map_err(plot_err)?;
    let recs = &run.records;
    chart
        .draw_series(LineSeries::new(
            decimate(recs.len(), 4000).map(|k| (recs[k].t, recs[k].psi)),
            &BLUE,
        ))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(
            [(0.0, threshold), (t_end, threshold)],
            RED.stroke_width(1),
        ))
        .map_err(plot_err)?;
    chart
        .draw_series(
            run.refinement_times
                .iter()
                .map(|&t| PathElement::new(vec![(t, 0.0), (t, 105.0)], BLACK.mix(0.4))),
        )
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Histogram of refinement instants across all runs.
pub fn plot_refinement_histogram(results: &[RunResult], t_end: f64, path: &Path) -> Result<()> {
    const BINS: usize = 50;
    let width = t_end.max(1e-9) / BINS as f64;
    let mut counts = [0u32; BINS];
    for t in results.iter().flat_map(|r| r.refinement_times.iter()) {
        counts[((t / width) as usize).min(BINS - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1);
    let root = SVGBackend::new(path, (900, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Refinement times", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..t_end.max(1e-9), 0u32..top + 1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("t (s)")
        .y_desc("count")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(
            counts
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(i, &n)| {
                    let x0 = i as f64 * width;
                    Rectangle::new([(x0, 0), (x0 + width, n)], BLUE.mix(0.6).filled())
                }),
        )
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Per-axis errors of one run with their ±3σ envelopes: attitude, rate, bias and
/// misalignment (against three times the hypothesis spread).
pub fn plot_errors(run: &RunResult, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (1200, 900)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let rows = root.split_evenly((4, 3));
    let recs = &run.records;
    let t_end = recs.last().map_or(1.0, |r| r.t);
    let idx: Vec<usize> = decimate(recs.len(), 1500).collect();
    type ErrorAndSigma<'a> = Box<dyn Fn(usize) -> (Vector3<f64>, Vector3<f64>) + 'a>;
    let groups: [(&str, ErrorAndSigma); 4] = [
        (
            "attitude (rad)",
            Box::new(|k| (recs[k].attitude_error, recs[k].sigma_attitude)),
        ),
        (
            "rate (rad/s)",
            Box::new(|k| (recs[k].omega_error(), recs[k].sigma_omega)),
        ),
        (
            "bias (rad/s)",
            Box::new(|k| (recs[k].bias_error(run), recs[k].sigma_bias)),
        ),
        (
            "misalignment (rad)",
            Box::new(|k| (recs[k].mu_error(run), recs[k].mu_spread)),
        ),
    ];
    for (g, (name, pick)) in groups.iter().enumerate() {
        let samples: Vec<(f64, Vector3<f64>, Vector3<f64>)> = idx
            .iter()
            .map(|&k| {
                let (e, s) = pick(k);
                (recs[k].t, e, s)
            })
            .collect();
        for axis in 0..3 {
            // scale to the settled envelope so the initial transient does not flatten the plot
            let tail = &samples[samples.len() / 10..];
            let mut lim = tail
                .iter()
                .map(|(_, e, s)| (3.0 * s[axis]).max(e[axis].abs()))
                .filter(|v| v.is_finite())
                .fold(0.0, f64::max);
            if !(lim > 0.0) {
                lim = 1.0;
            }
            let lim = lim * 1.2;
            let mut chart = ChartBuilder::on(&rows[3 * g + axis])
                .caption(
                    format!("{name} {}", ["x", "y", "z"][axis]),
                    ("sans-serif", 13),
                )
                .margin(5)
                .x_label_area_size(22)
                .y_label_area_size(55)
                .build_cartesian_2d(0.0..t_end, -lim..lim)
                .map_err(plot_err)?;
            chart
                .configure_mesh()
                .y_label_formatter(&|y| format!("{y:.1e}"))
                .draw()
                .map_err(plot_err)?;
            let clamp = |v: f64| v.clamp(-lim, lim);
            chart
                .draw_series(LineSeries::new(
                    samples.iter().map(|(t, e, _)| (*t, clamp(e[axis]))),
                    &BLUE,
                ))
                .map_err(plot_err)?;
            for sign in [1.0, -1.0] {
                chart
                    .draw_series(LineSeries::new(
                        samples
                            .iter()
                            .map(|(t, _, s)| (*t, clamp(sign * 3.0 * s[axis]))),
                        &RED,
                    ))
                    .map_err(plot_err)?;
            }
        }
    }
    root.present().map_err(plot_err)
}
