//! Attribution maps (saliency, integrated gradients, SmoothGrad), the
//! feature-leakage metric, the insertion game, the pixel-perturbation gap
//! and activation maximization.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{backward, Graph, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evalrep::{Curve, Table, Cell};
use crate::model::Model;

/// Rows per forward/backward pass when batching path points.
const ROW_BUDGET: usize = 256;

pub const DEFAULT_IG_STEPS: usize = 32;
pub const DEFAULT_SMOOTHGRAD_SAMPLES: usize = 25;
pub const DEFAULT_SMOOTHGRAD_SIGMA: f64 = 0.1;

/// Per-pixel scores for one input and one target class.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub scores: Vec<f64>,
    pub method: String,
    pub class: usize,
}

impl AttributionMap {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["pixel_index", "score"]);
        for (i, &s) in self.scores.iter().enumerate() {
            t.rows.push(vec![Cell::Int(i as i64), Cell::Float(s)]);
        }
        t
    }

    pub fn to_csv(&self) -> String {
        self.to_table().to_csv()
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AttributionMethod {
    Saliency,
    IntegratedGradients { steps: usize },
    SmoothGrad { samples: usize, sigma: f64, seed: u64 },
}

impl fmt::Display for AttributionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttributionMethod::Saliency => "saliency",
            AttributionMethod::IntegratedGradients { .. } => "ig",
            AttributionMethod::SmoothGrad { .. } => "smoothgrad",
        })
    }
}

impl FromStr for AttributionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saliency" => Ok(AttributionMethod::Saliency),
            "ig" => Ok(AttributionMethod::IntegratedGradients {
                steps: DEFAULT_IG_STEPS,
            }),
            "smoothgrad" => Ok(AttributionMethod::SmoothGrad {
                samples: DEFAULT_SMOOTHGRAD_SAMPLES,
                sigma: DEFAULT_SMOOTHGRAD_SIGMA,
                seed: 0,
            }),
            other => Err(Error::InvalidArgument(format!(
                "unknown attribution method `{other}`"
            ))),
        }
    }
}

impl AttributionMethod {
    pub fn compute(&self, model: &Model, x: &[f64], class: usize) -> Result<AttributionMap> {
        match *self {
            AttributionMethod::Saliency => saliency(model, x, class),
            AttributionMethod::IntegratedGradients { steps } => {
                integrated_gradients(model, x, &vec![0.0; x.len()], class, steps)
            }
            AttributionMethod::SmoothGrad {
                samples,
                sigma,
                seed,
            } => smoothgrad(model, x, class, samples, sigma, seed),
        }
    }
}

/// `∇_x f_{classes[r]}` for every row `r` of `x`.
pub fn class_gradients(model: &Model, x: &Tensor, classes: &[usize]) -> Result<Tensor> {
    let graph = Graph::new();
    let leaf = graph.leaf(&x.detach());
    let out = model.forward(&leaf)?.select_per_row(classes)?.sum()?;
    Ok(backward(&out, &[&leaf], false)?.remove(0))
}

fn check_input(model: &Model, x: &[f64], class: usize) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} values, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    if class >= model.class_count() {
        return Err(Error::ClassOutOfRange {
            class,
            classes: model.class_count(),
        });
    }
    Ok(())
}

fn class_logits(model: &Model, rows: usize, data: Vec<f64>, class: usize) -> Result<Vec<f64>> {
    let x = Tensor::matrix(rows, model.input_dim(), data)?;
    let logits = model.forward(&x)?;
    let c = logits.cols();
    Ok(logits.values().chunks(c).map(|r| r[class]).collect())
}

/// Raw gradient of the class logit.
pub fn saliency(model: &Model, x: &[f64], class: usize) -> Result<AttributionMap> {
    check_input(model, x, class)?;
    let t = Tensor::matrix(1, x.len(), x.to_vec())?;
    let g = class_gradients(model, &t, &[class])?;
    Ok(AttributionMap {
        scores: g.to_vec(),
        method: "saliency".into(),
        class,
    })
}

/// Integrated gradients for several inputs at once: `(x − b) ⊙` the
/// midpoint-rule mean of `∇f_class` along the straight path from `b` to `x`.
pub fn integrated_gradients_batch(
    model: &Model,
    inputs: &[&[f64]],
    baselines: &[&[f64]],
    classes: &[usize],
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("integrated gradients need m ≥ 1".into()));
    }
    if inputs.len() != baselines.len() || inputs.len() != classes.len() {
        return Err(Error::Shape(format!(
            "{} inputs, {} baselines, {} classes",
            inputs.len(),
            baselines.len(),
            classes.len()
        )));
    }
    let n = model.input_dim();
    for ((x, b), &c) in inputs.iter().zip(baselines).zip(classes) {
        check_input(model, x, c)?;
        if b.len() != n {
            return Err(Error::Shape(format!(
                "baseline has {} values, input has {n}",
                b.len()
            )));
        }
    }
    let alphas: Vec<f64> = (0..steps).map(|k| (k as f64 + 0.5) / steps as f64).collect();
    let per_chunk = (ROW_BUDGET / steps).max(1);
    let mut out = Vec::with_capacity(inputs.len());
    for start in (0..inputs.len()).step_by(per_chunk) {
        let end = (start + per_chunk).min(inputs.len());
        let mut data = Vec::with_capacity((end - start) * steps * n);
        let mut row_classes = Vec::with_capacity((end - start) * steps);
        for s in start..end {
            let (x, b) = (inputs[s], baselines[s]);
            for &a in &alphas {
                data.extend(x.iter().zip(b).map(|(xi, bi)| bi + a * (xi - bi)));
                row_classes.push(classes[s]);
            }
        }
        let path = Tensor::matrix(row_classes.len(), n, data)?;
        let grads = class_gradients(model, &path, &row_classes)?;
        for (k, block) in grads.values().chunks(steps * n).enumerate() {
            let s = start + k;
            let mut avg = vec![0.0; n];
            for row in block.chunks(n) {
                avg.iter_mut().zip(row).for_each(|(a, g)| *a += g);
            }
            out.push(
                avg.iter()
                    .zip(inputs[s].iter().zip(baselines[s]))
                    .map(|(g, (xi, bi))| (xi - bi) * (g / steps as f64))
                    .collect(),
            );
        }
    }
    Ok(out)
}

pub fn integrated_gradients(
    model: &Model,
    x: &[f64],
    baseline: &[f64],
    class: usize,
    steps: usize,
) -> Result<AttributionMap> {
    let scores = integrated_gradients_batch(model, &[x], &[baseline], &[class], steps)?.remove(0);
    Ok(AttributionMap {
        scores,
        method: "ig".into(),
        class,
    })
}

/// Mean saliency over `samples` copies of `x` with seeded Gaussian noise.
pub fn smoothgrad(
    model: &Model,
    x: &[f64],
    class: usize,
    samples: usize,
    sigma: f64,
    seed: u64,
) -> Result<AttributionMap> {
    check_input(model, x, class)?;
    if samples == 0 || !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothgrad needs n ≥ 1 and σ ≥ 0, got n={samples}, σ={sigma}"
        )));
    }
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("σ ≥ 0");
    let mut data = Vec::with_capacity(samples * n);
    for _ in 0..samples {
        data.extend(x.iter().map(|v| if sigma > 0.0 { v + noise.sample(&mut rng) } else { *v }));
    }
    let t = Tensor::matrix(samples, n, data)?;
    let g = class_gradients(model, &t, &vec![class; samples])?;
    let mut scores = vec![0.0; n];
    for row in g.values().chunks(n) {
        scores.iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    scores.iter_mut().for_each(|s| *s /= samples as f64);
    Ok(AttributionMap {
        scores,
        method: "smoothgrad".into(),
        class,
    })
}

/// Per-sample L₂ norm of the integrated-gradients attribution on the
/// masked (null) pixels. Only masked pixels move along the path; the rest
/// stay at their values. The target is the label.
pub fn leakage_per_sample(model: &Model, dataset: &Dataset, steps: usize) -> Result<Vec<f64>> {
    let masks = dataset.masks.as_ref().ok_or(Error::MissingMasks)?;
    let n = dataset.features();
    let baselines: Vec<Vec<f64>> = (0..dataset.len())
        .map(|i| {
            dataset
                .image(i)
                .iter()
                .zip(&masks[i * n..(i + 1) * n])
                .map(|(&v, &m)| if m { 0.0 } else { v })
                .collect()
        })
        .collect();
    let inputs: Vec<&[f64]> = (0..dataset.len()).map(|i| dataset.image(i)).collect();
    let base_refs: Vec<&[f64]> = baselines.iter().map(Vec::as_slice).collect();
    let maps = integrated_gradients_batch(model, &inputs, &base_refs, &dataset.labels, steps)?;
    Ok(maps
        .iter()
        .enumerate()
        .map(|(i, m)| {
            m.iter()
                .zip(&masks[i * n..(i + 1) * n])
                .filter(|(_, &mask)| mask)
                .map(|(v, _)| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Mean null-block attribution norm over the dataset.
pub fn feature_leakage(model: &Model, dataset: &Dataset, steps: usize) -> Result<f64> {
    let per = leakage_per_sample(model, dataset, steps)?;
    if per.is_empty() {
        return Err(Error::InvalidArgument("feature leakage of an empty dataset".into()));
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Pixel indices by descending score; ties keep ascending index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// Inserts pixels into a zero image in descending attribution order,
/// `⌈step_fraction·n⌉` at a time, recording `f_i(x_partial) / f_i(x)`
/// against the inserted fraction. Returns the curve and its trapezoid AUC.
pub fn insertion_game(
    model: &Model,
    x: &[f64],
    map: &[f64],
    class: usize,
    step_fraction: f64,
) -> Result<(Curve, f64)> {
    check_input(model, x, class)?;
    if map.len() != x.len() {
        return Err(Error::Shape(format!(
            "map has {} scores, input has {} pixels",
            map.len(),
            x.len()
        )));
    }
    if !(step_fraction > 0.0 && step_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "step fraction must lie in (0, 1], got {step_fraction}"
        )));
    }
    let n = x.len();
    let chunk = ((step_fraction * n as f64).ceil() as usize).clamp(1, n);
    let order = ranking(map);
    let mut counts = vec![0usize];
    while *counts.last().unwrap() < n {
        counts.push((counts.last().unwrap() + chunk).min(n));
    }
    let mut data = Vec::with_capacity(counts.len() * n);
    let mut partial = vec![0.0; n];
    let mut inserted = 0;
    for &c in &counts {
        for &p in &order[inserted..c] {
            partial[p] = x[p];
        }
        inserted = c;
        data.extend_from_slice(&partial);
    }
    let f = class_logits(model, counts.len(), data, class)?;
    // The last row is the full image, evaluated in the same pass.
    let full = *f.last().unwrap();
    if full == 0.0 {
        return Err(Error::ZeroNormalization(class));
    }
    let mut curve = Curve::new("insertion", "fraction");
    for (&c, v) in counts.iter().zip(&f) {
        curve.push(c as f64 / n as f64, v / full)?;
    }
    let auc = trapezoid(&curve.points);
    Ok((curve, auc))
}

fn check_k_grid(k_grid: &[f64]) -> Result<()> {
    if k_grid.is_empty()
        || k_grid.iter().any(|&k| !(k > 0.0 && k <= 100.0))
        || k_grid.windows(2).any(|w| !(w[1] > w[0]))
    {
        return Err(Error::InvalidArgument(format!(
            "k grid must be strictly ascending within (0, 100]: {k_grid:?}"
        )));
    }
    Ok(())
}

/// Pixel-perturbation gap with precomputed maps (one per sample), targeting
/// each sample's label. For each `k`, the mean over samples of the
/// fractional logit change `(f(x) − f(x'))/f(x)` after zeroing the top-k%
/// pixels minus the same after zeroing the bottom-k%.
pub fn pixel_perturbation_gap_with_maps(
    model: &Model,
    dataset: &Dataset,
    maps: &[Vec<f64>],
    k_grid: &[f64],
) -> Result<Curve> {
    check_k_grid(k_grid)?;
    if maps.len() != dataset.len() || dataset.is_empty() {
        return Err(Error::Shape(format!(
            "{} maps for {} samples",
            maps.len(),
            dataset.len()
        )));
    }
    let n = dataset.features();
    let counts: Vec<usize> = k_grid
        .iter()
        .map(|k| ((k / 100.0) * n as f64).round() as usize)
        .collect();
    let mut sums = vec![0.0; k_grid.len()];
    for (i, map) in maps.iter().enumerate() {
        if map.len() != n {
            return Err(Error::Shape(format!("map {i} has {} scores, expected {n}", map.len())));
        }
        let x = dataset.image(i);
        let class = dataset.labels[i];
        let order = ranking(map);
        // Row 0 is the clean image, then (top, bottom) pairs per k.
        let mut data = Vec::with_capacity((1 + 2 * counts.len()) * n);
        data.extend_from_slice(x);
        for &c in &counts {
            let mut top = x.to_vec();
            order[..c].iter().for_each(|&p| top[p] = 0.0);
            let mut bottom = x.to_vec();
            order[n - c..].iter().for_each(|&p| bottom[p] = 0.0);
            data.extend(top);
            data.extend(bottom);
        }
        let f = class_logits(model, 1 + 2 * counts.len(), data, class)?;
        let clean = f[0];
        if clean == 0.0 {
            return Err(Error::ZeroNormalization(class));
        }
        for (k, pair) in f[1..].chunks(2).enumerate() {
            sums[k] += (clean - pair[0]) / clean - (clean - pair[1]) / clean;
        }
    }
    let mut curve = Curve::new("perturbation-gap", "k");
    for (&k, s) in k_grid.iter().zip(sums) {
        curve.push(k, s / dataset.len() as f64)?;
    }
    Ok(curve)
}

pub fn pixel_perturbation_gap(
    model: &Model,
    dataset: &Dataset,
    method: AttributionMethod,
    k_grid: &[f64],
) -> Result<Curve> {
    let maps = (0..dataset.len())
        .map(|i| {
            method
                .compute(model, dataset.image(i), dataset.labels[i])
                .map(|m| m.scores)
        })
        .collect::<Result<Vec<_>>>()?;
    pixel_perturbation_gap_with_maps(model, dataset, &maps, k_grid)
}

/// Gradient ascent on `f_class` from seeded uniform noise, clipped to
/// `[0, 1]` after every step.
pub fn activation_maximization(
    model: &Model,
    class: usize,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("activation maximization needs ≥ 1 step".into()));
    }
    if class >= model.class_count() {
        return Err(Error::ClassOutOfRange {
            class,
            classes: model.class_count(),
        });
    }
    let n = model.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new_inclusive(0.0, 1.0);
    let mut x: Vec<f64> = (0..n).map(|_| u.sample(&mut rng)).collect();
    for _ in 0..steps {
        let t = Tensor::matrix(1, n, x.clone())?;
        let g = class_gradients(model, &t, &[class])?;
        x.iter_mut()
            .zip(g.values())
            .for_each(|(v, d)| *v = (*v + step_size * d).clamp(0.0, 1.0));
    }
    Ok(x)
}
