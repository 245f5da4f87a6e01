//! Accuracy (overall and per group), perturbation-robustness curves, OOD
//! scores with AUROC, and CSV / JSON-lines report emission.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attribution::class_gradients;
use crate::autodiff::{logsumexp_row, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, Model};

const EVAL_CHUNK: usize = 256;

/// Largest logit difference fed to `exp` in the density curve.
const DENSITY_CLAMP: f64 = 700.0;

/// Shortest decimal that parses back to the same `f64`; scientific
/// notation for very large or very small magnitudes.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if v.is_finite() && a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Ordered `(abscissa, value)` points with strictly increasing abscissa.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub abscissa_name: String,
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn new(label: impl Into<String>, abscissa_name: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            abscissa_name: abscissa_name.into(),
            points: Vec::new(),
        }
    }

    pub fn push(&mut self, x: f64, y: f64) -> Result<()> {
        if let Some(&(last, _)) = self.points.last() {
            if !(x > last) {
                return Err(Error::InvalidArgument(format!(
                    "curve abscissa must increase strictly: {x} after {last}"
                )));
            }
        }
        self.points.push((x, y));
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&[self.abscissa_name.as_str(), "value"]);
        for &(x, y) in &self.points {
            t.rows.push(vec![Cell::Float(x), Cell::Float(y)]);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => format_float(*f),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) if f.is_finite() => format_float(*f),
            Cell::Float(f) => serde_json::Value::String(format!("{f}")).to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => serde_json::Value::String(s.clone()).to_string(),
        }
    }
}

/// Rows of cells under a fixed column order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json-lines" | "jsonl" => Ok(ReportFormat::JsonLines),
            other => Err(Error::InvalidArgument(format!("unknown report format `{other}`"))),
        }
    }
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push('{');
            for (k, (col, cell)) in self.columns.iter().zip(row).enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}:{}", serde_json::Value::String(col.clone()), cell.json());
            }
            out.push_str("}\n");
        }
        out
    }

    /// Parses CSV written by [`Table::to_csv`]; every cell comes back as a
    /// float when it parses as one, text otherwise.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Malformed("empty CSV".into()))?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for line in lines {
            let cells: Vec<Cell> = line
                .split(',')
                .map(|c| match c.parse::<f64>() {
                    Ok(f) => Cell::Float(f),
                    Err(_) => Cell::Text(c.to_string()),
                })
                .collect();
            if cells.len() != columns.len() {
                return Err(Error::Malformed(format!(
                    "row has {} cells, header has {}",
                    cells.len(),
                    columns.len()
                )));
            }
            rows.push(cells);
        }
        Ok(Self { columns, rows })
    }
}

/// Writes `table` to `path` in the requested format.
pub fn emit_report(table: &Table, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => table.to_csv(),
        ReportFormat::JsonLines => table.to_json_lines(),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub overall: f64,
    /// `(group id, accuracy)` for every group id up to the largest present.
    pub per_group: Vec<(usize, f64)>,
    pub worst_group: Option<f64>,
}

pub fn predictions(model: &Model, dataset: &Dataset) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = dataset.batch(chunk)?;
        out.extend(argmax_rows(&model.forward(&x)?));
    }
    Ok(out)
}

/// Accuracy from predictions, with per-group breakdown when group ids are
/// given.
pub fn accuracy_from(
    predictions: &[usize],
    labels: &[usize],
    groups: Option<&[usize]>,
) -> Result<AccuracyReport> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty dataset".into()));
    }
    let hits: Vec<bool> = predictions.iter().zip(labels).map(|(p, l)| p == l).collect();
    let overall = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
    let (per_group, worst_group) = match groups {
        None => (Vec::new(), None),
        Some(groups) => {
            let count = groups.iter().max().map_or(0, |m| m + 1);
            let mut per = Vec::with_capacity(count);
            for g in 0..count {
                let members: Vec<bool> = groups
                    .iter()
                    .zip(&hits)
                    .filter(|(&gi, _)| gi == g)
                    .map(|(_, &h)| h)
                    .collect();
                if members.is_empty() {
                    return Err(Error::EmptyGroup(g));
                }
                per.push((g, members.iter().filter(|&&h| h).count() as f64 / members.len() as f64));
            }
            let worst = per.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            (per, Some(worst))
        }
    };
    Ok(AccuracyReport {
        overall,
        per_group,
        worst_group,
    })
}

pub fn accuracy(model: &Model, dataset: &Dataset) -> Result<AccuracyReport> {
    let preds = predictions(model, dataset)?;
    accuracy_from(&preds, &dataset.labels, dataset.groups.as_deref())
}

/// Gaussian noise for one `(sample, σ index)` pair. Every model evaluated
/// with the same seed sees the same noise.
fn paired_noise(seed: u64, sample: usize, sigma_index: usize, sigma: f64, len: usize) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; len];
    }
    let key = seed
        ^ (sample as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (sigma_index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let d = Normal::new(0.0, sigma).expect("sigma ≥ 0");
    (0..len).map(|_| d.sample(&mut rng)).collect()
}

fn check_sigma_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("σ grid is empty".into()));
    }
    if grid.iter().any(|&s| !(s >= 0.0)) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(format!(
            "σ grid must be non-negative and strictly ascending: {grid:?}"
        )));
    }
    Ok(())
}

fn perturbed(dataset: &Dataset, chunk: &[usize], seed: u64, sigma_index: usize, sigma: f64) -> Result<Tensor> {
    let n = dataset.features();
    let mut data = Vec::with_capacity(chunk.len() * n);
    for &i in chunk {
        let noise = paired_noise(seed, i, sigma_index, sigma, n);
        data.extend(dataset.image(i).iter().zip(noise).map(|(x, d)| x + d));
    }
    Tensor::matrix(chunk.len(), n, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientRobustness {
    pub curve: Curve,
    /// Samples excluded because `∇f(x)` was zero.
    pub skipped: usize,
}

/// Mean of `||∇f(x+δ) − ∇f(x)||₂ / ||∇f(x)||₂` per σ, with `f` the label
/// logit.
pub fn relative_gradient_robustness(
    model: &Model,
    dataset: &Dataset,
    sigma_grid: &[f64],
    seed: u64,
) -> Result<GradientRobustness> {
    check_sigma_grid(sigma_grid)?;
    let n = dataset.features();
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut sums = vec![0.0; sigma_grid.len()];
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, labels) = dataset.batch(chunk)?;
        let base = class_gradients(model, &x, &labels)?;
        let norms: Vec<f64> = base
            .values()
            .chunks(n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let keep: Vec<bool> = norms.iter().map(|&v| v > 0.0).collect();
        skipped += keep.iter().filter(|&&k| !k).count();
        counted += keep.iter().filter(|&&k| k).count();
        for (s, &sigma) in sigma_grid.iter().enumerate() {
            let xp = perturbed(dataset, chunk, seed, s, sigma)?;
            let g = class_gradients(model, &xp, &labels)?;
            for (r, (gr, br)) in g.values().chunks(n).zip(base.values().chunks(n)).enumerate() {
                if !keep[r] {
                    continue;
                }
                let diff = gr
                    .iter()
                    .zip(br)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                sums[s] += diff / norms[r];
            }
        }
    }
    let mut curve = Curve::new("relative-gradient", "sigma");
    for (&sigma, total) in sigma_grid.iter().zip(sums) {
        curve.push(sigma, if counted > 0 { total / counted as f64 } else { 0.0 })?;
    }
    Ok(GradientRobustness { curve, skipped })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityRobustness {
    pub curve: Curve,
    /// False when any logit difference had to be clamped or was non-finite.
    pub finite: bool,
}

/// Mean of `Σ_i exp(f_i(x+δ) − f_i(x))` per σ; equals the class count at
/// σ = 0.
pub fn density_robustness(
    model: &Model,
    dataset: &Dataset,
    sigma_grid: &[f64],
    seed: u64,
) -> Result<DensityRobustness> {
    check_sigma_grid(sigma_grid)?;
    let c = model.class_count();
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut sums = vec![0.0; sigma_grid.len()];
    let mut finite = true;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = dataset.batch(chunk)?;
        let base = model.forward(&x)?;
        for (s, &sigma) in sigma_grid.iter().enumerate() {
            let xp = perturbed(dataset, chunk, seed, s, sigma)?;
            let moved = model.forward(&xp)?;
            for (mr, br) in moved.values().chunks(c).zip(base.values().chunks(c)) {
                let mut total = 0.0;
                for (a, b) in mr.iter().zip(br) {
                    let d = a - b;
                    if !d.is_finite() || d > DENSITY_CLAMP {
                        finite = false;
                    }
                    total += if d.is_nan() { f64::NAN } else { d.min(DENSITY_CLAMP).exp() };
                }
                sums[s] += total;
            }
        }
    }
    let mut curve = Curve::new("density", "sigma");
    for (&sigma, total) in sigma_grid.iter().zip(sums) {
        curve.push(sigma, total / dataset.len() as f64)?;
    }
    Ok(DensityRobustness { curve, finite })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OodScore {
    LabelLogit,
    MaxLogit,
    LogSumExp,
}

impl FromStr for OodScore {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label-logit" => Ok(OodScore::LabelLogit),
            "max-logit" => Ok(OodScore::MaxLogit),
            "logsumexp" => Ok(OodScore::LogSumExp),
            other => Err(Error::InvalidArgument(format!("unknown OOD score `{other}`"))),
        }
    }
}

/// Per-sample score from `B × C` logits.
pub fn scores_from_logits(logits: &Tensor, labels: Option<&[usize]>, mode: OodScore) -> Result<Vec<f64>> {
    let c = logits.cols();
    let rows = logits.values().chunks(c);
    match mode {
        OodScore::LabelLogit => {
            let labels = labels.ok_or(Error::MissingLabels)?;
            rows.zip(labels)
                .map(|(r, &l)| {
                    r.get(l).copied().ok_or(Error::ClassOutOfRange {
                        class: l,
                        classes: c,
                    })
                })
                .collect()
        }
        OodScore::MaxLogit => Ok(rows.map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()),
        OodScore::LogSumExp => Ok(rows.map(logsumexp_row).collect()),
    }
}

pub fn ood_scores(model: &Model, dataset: &Dataset, mode: OodScore) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, labels) = dataset.batch(chunk)?;
        out.extend(scores_from_logits(&model.forward(&x)?, Some(&labels), mode)?);
    }
    Ok(out)
}

/// Probability that a random in-distribution score exceeds a random
/// out-of-distribution score, ties counting one half (Mann–Whitney U).
pub fn auroc(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::InvalidArgument("AUROC needs non-empty score lists".into()));
    }
    if in_scores.iter().chain(out_scores).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("AUROC scores".into()));
    }
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of midranks of the in-distribution scores, doubled to stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u128;
        let in_count = all[i..=j].iter().filter(|e| e.1).count() as u128;
        rank_sum2 += midrank2 * in_count;
        i = j + 1;
    }
    let n_in = in_scores.len() as u128;
    let n_out = out_scores.len() as u128;
    let u2 = rank_sum2 - n_in * (n_in + 1);
    Ok(u2 as f64 / (2 * n_in * n_out) as f64)
}
