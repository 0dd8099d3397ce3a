use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::RolloutCurve;
use super::metrics::{Metrics, MetricsReport};
use super::BenchError;

pub const RESULTS_FILE: &str = "results.csv";

/// One row of `results.csv`. `step` is empty for single-step metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub model: String,
    pub problem: String,
    pub subset: String,
    pub split: String,
    pub metric: String,
    pub step: Option<usize>,
    pub value: f64,
}

/// Labels shared by the rows of one evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordKey {
    pub model: String,
    pub problem: String,
    pub subset: String,
    pub split: String,
}

impl RecordKey {
    pub fn new(model: &str, problem: &str, subset: &str, split: &str) -> Self {
        Self { model: model.into(), problem: problem.into(), subset: subset.into(), split: split.into() }
    }

    fn record(&self, metric: &str, step: Option<usize>, value: f64) -> ResultRecord {
        ResultRecord {
            model: self.model.clone(),
            problem: self.problem.clone(),
            subset: self.subset.clone(),
            split: self.split.clone(),
            metric: metric.into(),
            step,
            value,
        }
    }

    /// `mse`, `nmse`, `mae` and `frames` rows.
    pub fn metrics(&self, report: &MetricsReport) -> Vec<ResultRecord> {
        let mut rows: Vec<_> = Metrics::NAMES.iter().map(|&m| self.record(m, None, report.metrics.get(m).unwrap())).collect();
        rows.push(self.record("frames", None, report.frames as f64));
        rows
    }

    /// One row per metric and step.
    pub fn rollout(&self, curve: &RolloutCurve) -> Vec<ResultRecord> {
        Metrics::NAMES
            .iter()
            .flat_map(|&m| curve.steps.iter().zip(&curve.metrics).map(move |(&s, v)| self.record(m, Some(s), v.get(m).unwrap())))
            .collect()
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.to_path_buf(), source }
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Writes `results.csv` and one log-scale SVG per (problem, metric) group of
/// rollout rows. Returns the written paths, CSV first.
pub fn emit_report(records: &[ResultRecord], dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert((&r.model, &r.problem, &r.subset, &r.split, &r.metric, r.step)) {
            return Err(BenchError::Contract(format!(
                "duplicate result {}/{}/{}/{}/{} step {:?}",
                r.model, r.problem, r.subset, r.split, r.metric, r.step
            )));
        }
    }
    fs::create_dir_all(dir).map_err(io(dir))?;
    let csv_path = dir.join(RESULTS_FILE);
    let file = fs::File::create(&csv_path).map_err(io(&csv_path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(["model", "problem", "subset", "split", "metric", "step", "value"]).map_err(|e| BenchError::Parse(e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| BenchError::Parse(e.to_string()))?;
    }
    w.flush().map_err(io(&csv_path))?;
    let mut written = vec![csv_path];

    let mut groups: BTreeMap<(&str, &str), BTreeMap<String, Vec<(usize, f64)>>> = BTreeMap::new();
    for r in records {
        if let Some(step) = r.step {
            let series = format!("{} ({}, {})", r.model, r.subset, r.split);
            groups.entry((&r.problem, &r.metric)).or_default().entry(series).or_default().push((step, r.value));
        }
    }
    for ((problem, metric), series) in groups {
        let path = dir.join(format!("rollout_{}_{}.svg", file_stem(problem), file_stem(metric)));
        plot_group(&path, problem, metric, series)?;
        written.push(path);
    }
    Ok(written)
}

fn plot_group(path: &Path, problem: &str, metric: &str, mut series: BTreeMap<String, Vec<(usize, f64)>>) -> Result<(), BenchError> {
    let plot_err = |e: &dyn std::fmt::Display| BenchError::Plot(format!("{}: {e}", path.display()));
    let positive = series.values().flatten().map(|p| p.1).filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = positive.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo / 2.0, hi * 2.0) } else { (1e-12, 1.0) };
    let floor = lo;
    let max_step = series.values().flatten().map(|p| p.0).max().unwrap_or(1).max(1);

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{problem}: {metric} vs rollout step"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(1.0..max_step as f64, (lo..hi).log_scale())
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("forward propagation steps")
        .y_desc(metric)
        .draw()
        .map_err(|e| plot_err(&e))?;
    for (i, (name, points)) in series.iter_mut().enumerate() {
        points.sort_by_key(|p| p.0);
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(points.iter().map(|&(s, v)| (s as f64, v.max(floor))), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>, BenchError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::Parse(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| BenchError::Parse(format!("{}: {e}", path.display())))).collect()
}
