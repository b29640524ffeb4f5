use std::collections::BTreeMap;

use mvcsc::bench::{BenchReport, ConvergenceReport};
use mvcsc::plot::{Chart, Series};
use mvcsc::simulate::ExperimentRow;

pub fn loss_vs_sigma(rows: &[ExperimentRow]) -> Chart {
    let mut by_p: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        by_p.entry(r.p).or_default().push((r.sigma, r.loss_mean));
    }
    let log_x = rows.iter().all(|r| r.sigma > 0.0) && by_p.values().any(|v| v.len() > 1);
    Chart {
        title: "Recovery loss at the best lambda".into(),
        x_label: "noise sigma".into(),
        y_label: "mean recovery loss".into(),
        log_x,
        log_y: true,
        series: by_p
            .into_iter()
            .map(|(p, mut pts)| {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series {
                    name: format!("P={p}"),
                    points: pts,
                }
            })
            .collect(),
    }
}

pub fn scaling(report: &BenchReport) -> Chart {
    let mut by_step: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for m in &report.measurements {
        by_step.entry(m.step.as_str()).or_default().push((m.p as f64, m.normalized));
    }
    let ps: Vec<f64> = by_step.values().next().map(|v| v.iter().map(|p| p.0).collect()).unwrap_or_default();
    let p0 = ps.first().copied().unwrap_or(1.0);
    let mut series: Vec<Series> = by_step
        .into_iter()
        .map(|(name, points)| Series {
            name: name.to_string(),
            points,
        })
        .collect();
    series.push(Series {
        name: "linear".into(),
        points: ps.iter().map(|&p| (p, p / p0)).collect(),
    });
    Chart {
        title: "Time relative to the smallest P".into(),
        x_label: "channels P".into(),
        y_label: "normalized time".into(),
        log_x: true,
        log_y: true,
        series,
    }
}

/// One chart per lambda: objective gap to the best run against wall time, first init only.
pub fn convergence(report: &ConvergenceReport) -> Vec<(f64, Chart)> {
    report
        .best_objective
        .iter()
        .map(|&(frac, best)| {
            let series = report
                .runs
                .iter()
                .filter(|r| r.lambda_fraction == frac && r.init == 0)
                .map(|r| Series {
                    name: r.solver.name().to_string(),
                    points: r.curve.iter().map(|&(t, f)| (t, f - best)).collect(),
                })
                .collect();
            let chart = Chart {
                title: format!("Z-step convergence, lambda = {frac} lambda_max"),
                x_label: "seconds".into(),
                y_label: "objective - best".into(),
                log_x: true,
                log_y: true,
                series,
            };
            (frac, chart)
        })
        .collect()
}
