//! Synthetic datasets: stroke digits, null-block composition and a
//! two-feature spurious-correlation benchmark.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};

/// Templates never change with the dataset seed; only noise does.
const TEMPLATE_SEED: u64 = 0x5EED_D161;
const STROKES_PER_TEMPLATE: usize = 4;

fn draw_line(grid: &mut [f64], side: usize, (r0, c0): (i64, i64), (r1, c1): (i64, i64)) {
    let steps = (r1 - r0).abs().max((c1 - c0).abs()).max(1);
    for t in 0..=steps {
        let frac = t as f64 / steps as f64;
        let r = r0 + ((r1 - r0) as f64 * frac).round() as i64;
        let c = c0 + ((c1 - c0) as f64 * frac).round() as i64;
        grid[r as usize * side + c as usize] = 1.0;
    }
}

fn hamming(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Binary stroke templates on a `side × side` grid, one per class, with
/// pairwise Hamming distance of at least `side`.
pub fn stroke_templates(classes: usize, side: usize) -> Result<Vec<Vec<f64>>> {
    if classes == 0 || classes > 10 {
        return Err(Error::InvalidArgument(format!(
            "classes must be in 1..=10, got {classes}"
        )));
    }
    if side < 7 {
        return Err(Error::InvalidArgument(format!("side must be ≥ 7, got {side}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED ^ side as u64);
    let lo = 1i64;
    let hi = side as i64 - 2;
    let mut templates: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while templates.len() < classes {
        let mut grid = vec![0.0; side * side];
        for _ in 0..STROKES_PER_TEMPLATE {
            let a = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
            let b = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
            draw_line(&mut grid, side, a, b);
        }
        if templates.iter().all(|t| hamming(t, &grid) >= side) {
            templates.push(grid);
        }
    }
    Ok(templates)
}

/// A box with both diagonals drawn through it.
pub fn box_pattern(side: usize) -> Vec<f64> {
    let mut grid = vec![0.0; side * side];
    let last = side as i64 - 1;
    draw_line(&mut grid, side, (0, 0), (0, last));
    draw_line(&mut grid, side, (last, 0), (last, last));
    draw_line(&mut grid, side, (0, 0), (last, 0));
    draw_line(&mut grid, side, (0, last), (last, last));
    draw_line(&mut grid, side, (0, 0), (last, last));
    draw_line(&mut grid, side, (0, last), (last, 0));
    grid
}

fn normal(sigma: f64) -> Result<Option<Normal<f64>>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise must be ≥ 0, got {sigma}")));
    }
    Ok(if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).expect("valid sigma"))
    } else {
        None
    })
}

/// `per_class` noisy copies of each class template, interleaved by class.
pub fn synth_digits(
    classes: usize,
    side: usize,
    per_class: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    let templates = stroke_templates(classes, side)?;
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be ≥ 1".into()));
    }
    let dist = normal(noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * per_class;
    let mut images = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        labels.push(label);
        for &v in &templates[label] {
            let noisy = match &dist {
                Some(d) => v + d.sample(&mut rng),
                None => v,
            };
            images.push(noisy.clamp(0.0, 1.0));
        }
    }
    Dataset::new(images, side, side, labels, classes)
}

/// Stacks each `s × s` base image with `null_pattern` into a `2s × s` image.
/// The null block goes on top or bottom by a seeded coin flip, or always at
/// the bottom with `fixed_placement`. Masks mark the null block.
pub fn compose_block(
    base: &Dataset,
    null_pattern: &[f64],
    seed: u64,
    fixed_placement: bool,
) -> Result<Dataset> {
    let s = base.width;
    if base.height != s {
        return Err(Error::Shape(format!(
            "base images must be square, got {}x{}",
            base.height, s
        )));
    }
    if null_pattern.len() != s * s {
        return Err(Error::Shape(format!(
            "null pattern has {} pixels, base block has {}",
            null_pattern.len(),
            s * s
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(base.len() * 2 * s * s);
    let mut masks = Vec::with_capacity(base.len() * 2 * s * s);
    for i in 0..base.len() {
        let null_on_top = !fixed_placement && rng.gen_bool(0.5);
        let digit = base.image(i);
        let (top, bottom) = if null_on_top {
            (null_pattern, digit)
        } else {
            (digit, null_pattern)
        };
        images.extend_from_slice(top);
        images.extend_from_slice(bottom);
        masks.extend(std::iter::repeat(null_on_top).take(s * s));
        masks.extend(std::iter::repeat(!null_on_top).take(s * s));
    }
    let mut out = Dataset::new(images, 2 * s, s, base.labels.clone(), base.classes)?;
    out.groups = base.groups.clone();
    out.with_masks(masks)
}

/// Parameters of the BlockMNIST-style benchmark built from synthetic digits.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub classes: usize,
    pub side: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            side: 14,
            train_per_class: 200,
            test_per_class: 50,
            noise: 0.3,
            seed: 0,
        }
    }
}

/// Train split with randomly placed null blocks and test split with the
/// null block fixed at the bottom.
pub fn block_mnist(cfg: &BlockConfig) -> Result<(Dataset, Dataset)> {
    let null = box_pattern(cfg.side);
    let base_train = synth_digits(cfg.classes, cfg.side, cfg.train_per_class, cfg.noise, cfg.seed)?;
    let base_test = synth_digits(
        cfg.classes,
        cfg.side,
        cfg.test_per_class,
        cfg.noise,
        cfg.seed ^ 0x5EED_7E57,
    )?;
    let train = compose_block(&base_train, &null, cfg.seed.wrapping_add(1), false)?;
    let test = compose_block(&base_test, &null, cfg.seed.wrapping_add(2), true)?;
    Ok((train, test))
}

/// Parameters of the two-class spurious-correlation benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct SpuriousConfig {
    pub core_dim: usize,
    pub spurious_dim: usize,
    /// Probability that the spurious pattern agrees with the label.
    pub majority_fraction: f64,
    pub n: usize,
    /// Amplitude of the label-determined core pattern around 0.5.
    pub core_signal: f64,
    pub core_noise: f64,
    /// Amplitude of the spurious pattern around 0.5.
    pub spurious_signal: f64,
    pub spurious_noise: f64,
    pub seed: u64,
}

impl Default for SpuriousConfig {
    fn default() -> Self {
        Self {
            core_dim: 16,
            spurious_dim: 16,
            majority_fraction: 0.95,
            n: 2000,
            core_signal: 0.08,
            core_noise: 0.3,
            spurious_signal: 0.02,
            spurious_noise: 0.002,
            seed: 0,
        }
    }
}

fn alternating(j: usize) -> f64 {
    if j % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn halves(j: usize, dim: usize) -> f64 {
    if j < dim / 2 {
        1.0
    } else {
        -1.0
    }
}

/// Two-class vectors `[core | spurious]` (height 1). The core pattern is
/// determined by the label; the spurious pattern agrees with the label with
/// probability `majority_fraction`. Group id is `2·label + disagree`.
pub fn synth_spurious(cfg: &SpuriousConfig) -> Result<Dataset> {
    if !(cfg.majority_fraction > 0.5 && cfg.majority_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "majority_fraction must be in (0.5, 1), got {}",
            cfg.majority_fraction
        )));
    }
    if cfg.core_dim == 0 || cfg.spurious_dim == 0 || cfg.n == 0 {
        return Err(Error::InvalidArgument(
            "core_dim, spurious_dim and n must be ≥ 1".into(),
        ));
    }
    let core_noise = normal(cfg.core_noise)?;
    let spurious_noise = normal(cfg.spurious_noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = cfg.core_dim + cfg.spurious_dim;
    let mut images = Vec::with_capacity(cfg.n * width);
    let mut labels = Vec::with_capacity(cfg.n);
    let mut groups = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let label = usize::from(rng.gen_bool(0.5));
        let agree = rng.gen_bool(cfg.majority_fraction);
        let attr = if agree { label } else { 1 - label };
        let sign = |c: usize| if c == 0 { 1.0 } else { -1.0 };
        for j in 0..cfg.core_dim {
            let mut v = 0.5 + cfg.core_signal * sign(label) * alternating(j);
            if let Some(d) = &core_noise {
                v += d.sample(&mut rng);
            }
            images.push(v.clamp(0.0, 1.0));
        }
        for j in 0..cfg.spurious_dim {
            let mut v = 0.5 + cfg.spurious_signal * sign(attr) * halves(j, cfg.spurious_dim);
            if let Some(d) = &spurious_noise {
                v += d.sample(&mut rng);
            }
            images.push(v.clamp(0.0, 1.0));
        }
        labels.push(label);
        groups.push(2 * label + usize::from(!agree));
    }
    Dataset::new(images, 1, width, labels, 2)?.with_groups(groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_are_far_apart() {
        for side in [7, 10, 14, 28] {
            let t = stroke_templates(10, side).unwrap();
            for i in 0..10 {
                for j in i + 1..10 {
                    assert!(hamming(&t[i], &t[j]) >= side, "side {side}: {i} vs {j}");
                }
            }
        }
    }

    #[test]
    fn parameter_ranges_are_checked() {
        assert!(synth_digits(11, 14, 1, 0.0, 0).is_err());
        assert!(synth_digits(10, 6, 1, 0.0, 0).is_err());
        assert!(synth_digits(10, 14, 1, -0.1, 0).is_err());
        let cfg = SpuriousConfig {
            majority_fraction: 0.5,
            ..SpuriousConfig::default()
        };
        assert!(synth_spurious(&cfg).is_err());
    }

    #[test]
    fn noiseless_classes_are_identical() {
        let ds = synth_digits(3, 9, 4, 0.0, 1).unwrap();
        for i in 0..ds.len() {
            let first = ds.labels[i];
            assert_eq!(ds.image(i), ds.image(first));
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            synth_digits(4, 10, 5, 0.2, 9).unwrap(),
            synth_digits(4, 10, 5, 0.2, 9).unwrap()
        );
        let cfg = SpuriousConfig {
            n: 100,
            ..SpuriousConfig::default()
        };
        assert_eq!(synth_spurious(&cfg).unwrap(), synth_spurious(&cfg).unwrap());
    }

    #[test]
    fn block_mask_covers_null_block_only() {
        let base = synth_digits(3, 8, 10, 0.3, 2).unwrap();
        let null = box_pattern(8);
        let ds = compose_block(&base, &null, 4, false).unwrap();
        assert_eq!((ds.height, ds.width), (16, 8));
        for i in 0..ds.len() {
            let mask = ds.mask(i).unwrap();
            assert_eq!(mask.iter().filter(|&&m| m).count(), 64);
            let top = mask[0];
            assert!(mask[..64].iter().all(|&m| m == top));
            assert!(mask[64..].iter().all(|&m| m == !top));
            let null_pixels: Vec<f64> = ds
                .image(i)
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .collect();
            assert_eq!(null_pixels, null);
        }
    }

    #[test]
    fn fixed_placement_puts_null_at_bottom() {
        let base = synth_digits(2, 7, 3, 0.1, 0).unwrap();
        let ds = compose_block(&base, &box_pattern(7), 0, true).unwrap();
        for i in 0..ds.len() {
            let mask = ds.mask(i).unwrap();
            assert!(mask[..49].iter().all(|&m| !m));
            assert!(mask[49..].iter().all(|&m| m));
        }
    }

    #[test]
    fn random_placement_is_balanced() {
        let base = synth_digits(10, 7, 100, 0.0, 0).unwrap();
        let ds = compose_block(&base, &box_pattern(7), 17, false).unwrap();
        let top = (0..ds.len()).filter(|&i| ds.mask(i).unwrap()[0]).count() as f64;
        // binomial(1000, 0.5): mean 500, sd ≈ 15.8
        assert!((top - 500.0).abs() <= 3.0 * 250f64.sqrt(), "{top}");
    }

    #[test]
    fn compose_rejects_non_square() {
        let base = Dataset::new(vec![0.0; 8], 2, 4, vec![0], 1).unwrap();
        assert!(compose_block(&base, &[0.0; 16], 0, true).is_err());
    }

    #[test]
    fn spurious_groups_partition_and_minority_is_small() {
        let ds = synth_spurious(&SpuriousConfig {
            n: 4000,
            seed: 5,
            ..SpuriousConfig::default()
        })
        .unwrap();
        let groups = ds.groups.as_ref().unwrap();
        let sizes: Vec<usize> = (0..4).map(|g| groups.iter().filter(|&&x| x == g).count()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 4000);
        let minority = (sizes[1] + sizes[3]) as f64 / 4000.0;
        // binomial(4000, 0.05): sd ≈ 0.0034
        assert!((minority - 0.05).abs() < 3.0 * (0.05f64 * 0.95 / 4000.0).sqrt(), "{minority}");
    }
}
