//! The `report` subcommand: tables, summaries and SVG plots.

use std::path::Path;

use encodermi::contrastive::write_atomic;
use encodermi::eval::{summarize, BackgroundKnowledge, EvaluationReport};
use encodermi::{json_digest, Error, Result};
use plotters::prelude::*;

use crate::context::Ctx;
use crate::stages::{read_json, stage, write_json, Outcome};
use crate::studies::{csv_err, StudyAxis, StudyRow};

const YES_NO: [&str; 2] = ["no", "yes"];

pub fn write_report_csv(path: &Path, reports: &[EvaluationReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "P", "E", "T", "trial", "accuracy", "precision", "recall", "seed"]).map_err(csv_err)?;
    for r in reports {
        let k = |f: fn(BackgroundKnowledge) -> bool| r.knowledge.map(|b| YES_NO[f(b) as usize].to_string()).unwrap_or_default();
        w.write_record([
            r.method.clone(),
            k(|b| b.p),
            k(|b| b.e),
            k(|b| b.t),
            r.trial.to_string(),
            format!("{:.6}", r.accuracy),
            r.precision.map(|p| format!("{p:.6}")).unwrap_or_default(),
            format!("{:.6}", r.recall),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("plot: {e}")))
}

/// Reports from `evaluate` and (if present) `baselines`.
fn collected_reports(ctx: &Ctx) -> Result<Vec<EvaluationReport>> {
    let mut all: Vec<EvaluationReport> = read_json(&ctx.run.path("reports/evaluate.json"), "run `evaluate` first")?;
    let baselines = ctx.run.path("reports/baselines.json");
    if baselines.exists() {
        all.extend(read_json::<Vec<EvaluationReport>>(&baselines, "baseline reports")?);
    }
    Ok(all)
}

fn study_files(ctx: &Ctx) -> Vec<(StudyAxis, std::path::PathBuf)> {
    StudyAxis::ALL
        .into_iter()
        .map(|a| (a, ctx.run.path(format!("reports/studies/{a}.json"))))
        .filter(|(_, p)| p.exists())
        .collect()
}

pub fn report(ctx: &Ctx) -> Result<Outcome> {
    let mut inputs = Vec::new();
    for p in [ctx.run.path("reports/evaluate.json"), ctx.run.path("reports/baselines.json")]
        .into_iter()
        .chain(study_files(ctx).into_iter().map(|(_, p)| p))
    {
        if p.exists() {
            inputs.push(std::fs::read_to_string(p)?);
        }
    }
    let name = format!("report-{}", json_digest(&inputs));
    stage(ctx, &name, |ctx| {
        let reports = collected_reports(ctx)?;
        write_report_csv(&ctx.run.path("reports/report.csv"), &reports)?;
        write_json(&ctx.run.path("reports/summary.json"), &summarize(&reports))?;
        plot_pr_curves(&ctx.run.path("plots/pr-curves.svg"), &reports)?;
        for (axis, path) in study_files(ctx) {
            let rows: Vec<StudyRow> = read_json(&path, "study rows")?;
            plot_study(&ctx.run.path(format!("plots/study-{axis}.svg")), axis, &rows)?;
        }
        Ok(())
    })
}

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

type Series = (String, Vec<(f64, f64)>);

fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, x_range: (f64, f64), series: &[Series]) -> Result<()> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let (x0, x1) = if x_range.0 < x_range.1 { x_range } else { (x_range.0 - 0.5, x_range.1 + 0.5) };
        let ys = series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.1));
        let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
        let (y0, y1) = if y0 < y1 { (y0.min(0.0), y1.max(1.0)) } else { (0.0, 1.0) };
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
        for (i, (label, pts)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(label.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
            chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    write_atomic(path, svg.as_bytes())
}

/// Recall/precision curves of the first trial of every cell.
fn plot_pr_curves(path: &Path, reports: &[EvaluationReport]) -> Result<()> {
    let series: Vec<Series> = reports
        .iter()
        .filter(|r| r.trial == 0)
        .filter_map(|r| {
            let pts: Vec<(f64, f64)> =
                r.pr_curve.as_ref()?.iter().filter_map(|p| Some((p.recall, p.precision?))).collect();
            let label = match &r.knowledge {
                Some(b) => format!("{} {}", r.method, b.label()),
                None => r.method.clone(),
            };
            Some((label, pts))
        })
        .collect();
    line_chart(path, "Precision against recall", "recall", "precision", (0.0, 1.0), &series)
}

fn plot_study(path: &Path, axis: StudyAxis, rows: &[StudyRow]) -> Result<()> {
    let x_of = |r: &StudyRow, i: usize| r.value.parse::<f64>().unwrap_or(i as f64);
    let values: Vec<&str> = {
        let mut v: Vec<&str> = Vec::new();
        for r in rows {
            if !v.contains(&r.value.as_str()) {
                v.push(&r.value);
            }
        }
        v
    };
    let index = |r: &StudyRow| values.iter().position(|v| *v == r.value).unwrap_or(0);
    let mean_series = |label: String, pick: &dyn Fn(&StudyRow) -> Option<f64>, filter: &dyn Fn(&StudyRow) -> bool| -> Series {
        let pts = values
            .iter()
            .filter_map(|v| {
                let cell: Vec<f64> = rows.iter().filter(|r| r.value == *v && filter(r)).filter_map(pick).collect();
                let first = rows.iter().find(|r| r.value == *v)?;
                (!cell.is_empty()).then(|| (x_of(first, index(first)), cell.iter().sum::<f64>() / cell.len() as f64))
            })
            .collect();
        (label, pts)
    };
    let mut series = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    for r in rows {
        if let Some(m) = &r.method {
            if !methods.contains(m) {
                methods.push(m.clone());
            }
        }
    }
    for m in &methods {
        series.push(mean_series(m.clone(), &|r| r.accuracy, &|r| r.method.as_ref() == Some(m)));
    }
    if rows.iter().any(|r| r.downstream_accuracy.is_some()) {
        series.push(mean_series("downstream".into(), &|r| r.downstream_accuracy, &|_| true));
    }
    if rows.iter().any(|r| r.member_avg.is_some()) {
        series.push(mean_series("members".into(), &|r| r.member_avg, &|_| true));
        series.push(mean_series("non-members".into(), &|r| r.nonmember_avg, &|_| true));
    }
    let xs: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    let range = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let range = if range.0.is_finite() { range } else { (0.0, 1.0) };
    let y = if axis == StudyAxis::Overfitting { "average similarity" } else { "accuracy" };
    line_chart(path, &format!("Study: {axis}"), axis.as_str(), y, range, &series)
}
