use margreg::attribution::{
    activation_maximization, feature_leakage, insertion_game, integrated_gradients,
    pixel_perturbation_gap_with_maps, saliency, smoothgrad,
};
use margreg::data::Dataset;
use margreg::model::{Activation, Layer, Model};
use margreg::Tensor;

fn linear(w: Vec<f64>, classes: usize) -> Model {
    let n = w.len() / classes;
    Model::from_layers(
        vec![Layer::new(n, classes, w, vec![0.0; classes]).unwrap()],
        Activation::Relu,
    )
    .unwrap()
}

fn logit(model: &Model, x: &[f64], class: usize) -> f64 {
    model
        .forward(&Tensor::matrix(1, x.len(), x.to_vec()).unwrap())
        .unwrap()
        .values()[class]
}

#[test]
fn saliency_matches_finite_differences() {
    let model = Model::init(&[5, 7, 3], Activation::Softplus, 4).unwrap();
    let x = [0.2, 0.9, 0.4, 0.1, 0.6];
    let map = saliency(&model, &x, 2).unwrap();
    for j in 0..5 {
        let (mut p, mut m) = (x, x);
        p[j] += 1e-6;
        m[j] -= 1e-6;
        let numeric = (logit(&model, &p, 2) - logit(&model, &m, 2)) / 2e-6;
        let a = map.scores[j];
        assert!((a - numeric).abs() <= 1e-4 * a.abs().max(1e-3), "{a} vs {numeric}");
    }
}

#[test]
fn zero_model_saliency_is_zero() {
    let model = linear(vec![0.0; 6], 2);
    assert!(saliency(&model, &[0.3, 0.5, 0.7], 1)
        .unwrap()
        .scores
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn completeness_gap_shrinks_as_steps_double() {
    for seed in 0..5 {
        let model = Model::init(&[6, 8, 3], Activation::Softplus, seed).unwrap();
        let x = [0.9, 0.1, 0.8, 0.3, 0.7, 0.5];
        let zero = [0.0; 6];
        let target = logit(&model, &x, 1) - logit(&model, &zero, 1);
        let gap = |m| (integrated_gradients(&model, &x, &zero, 1, m).unwrap().total() - target).abs();
        let (g8, g16, g32) = (gap(8), gap(16), gap(32));
        assert!(g32 <= 1e-3, "m=32 gap {g32}");
        // Midpoint error falls at least by half per doubling, with 4× slack.
        assert!(g16 <= 4.0 * g8 / 2.0 + 1e-12, "{g8} → {g16}");
        assert!(g32 <= 4.0 * g16 / 2.0 + 1e-12, "{g16} → {g32}");
    }
}

#[test]
fn smoothgrad_on_linear_model_is_saliency() {
    let model = linear(vec![0.5, -1.0, 2.0, 0.25, 0.0, -0.75], 2);
    let x = [0.1, 0.2, 0.3];
    let s = saliency(&model, &x, 0).unwrap().scores;
    let sg = smoothgrad(&model, &x, 0, 13, 0.4, 3).unwrap().scores;
    for (a, b) in s.iter().zip(&sg) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn smoothgrad_variance_falls_with_more_samples() {
    let model = Model::init(&[4, 16, 2], Activation::Softplus, 8).unwrap();
    let x = [0.5, 0.2, 0.8, 0.4];
    let spread = |n: usize| {
        let maps: Vec<Vec<f64>> = (0..40)
            .map(|seed| smoothgrad(&model, &x, 0, n, 0.5, seed).unwrap().scores)
            .collect();
        (0..4)
            .map(|j| {
                let mean = maps.iter().map(|m| m[j]).sum::<f64>() / maps.len() as f64;
                maps.iter().map(|m| (m[j] - mean).powi(2)).sum::<f64>() / maps.len() as f64
            })
            .sum::<f64>()
    };
    let (v2, v32) = (spread(2), spread(32));
    assert!(v32 < v2, "variance {v2} → {v32}");
}

fn masked_dataset() -> Dataset {
    // Two samples of 2×2; the bottom row is the null block.
    Dataset::new(vec![0.2, 0.4, 0.6, 0.8, 0.9, 0.1, 0.3, 0.5], 2, 2, vec![0, 1], 2)
        .unwrap()
        .with_masks(vec![false, false, true, true, false, false, true, true])
        .unwrap()
}

#[test]
fn leakage_is_zero_for_a_blind_model() {
    let ds = masked_dataset();
    let mut model = Model::init(&[4, 5, 2], Activation::Softplus, 2).unwrap();
    for row in model.layers_mut()[0].weights.chunks_mut(4) {
        row[2] = 0.0;
        row[3] = 0.0;
    }
    assert_eq!(feature_leakage(&model, &ds, 32).unwrap(), 0.0);
}

#[test]
fn leakage_of_linear_model_is_analytic() {
    let ds = masked_dataset();
    let w = vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.25, 2.0, -0.5];
    let model = linear(w.clone(), 2);
    let mut expect = 0.0;
    for i in 0..2 {
        let x = ds.image(i);
        let c = ds.labels[i];
        let sq: f64 = (2..4).map(|j| (x[j] * w[c * 4 + j]).powi(2)).sum();
        expect += sq.sqrt() / 2.0;
    }
    let got = feature_leakage(&model, &ds, 8).unwrap();
    assert!((got - expect).abs() <= 1e-12, "{got} vs {expect}");
}

#[test]
fn oracle_insertion_order_beats_reverse_order() {
    let w = [0.1, 2.0, 0.5, 1.5, 0.05, 0.8];
    let mut weights = w.to_vec();
    weights.extend([0.0; 6]);
    let model = linear(weights, 2);
    let x = [0.9, 0.6, 0.3, 0.7, 0.2, 0.4];
    let oracle: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a * b).collect();
    let reverse: Vec<f64> = oracle.iter().map(|v| -v).collect();
    let (curve, desc) = insertion_game(&model, &x, &oracle, 0, 1.0 / 6.0).unwrap();
    let (_, asc) = insertion_game(&model, &x, &reverse, 0, 1.0 / 6.0).unwrap();
    assert!(desc >= asc, "{desc} < {asc}");
    // Brute force: cumulative oracle mass in descending order.
    let mut sorted = oracle.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    let mut acc = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        acc += v;
        assert!((curve.points[k + 1].1 - acc / total).abs() <= 1e-12);
    }
}

#[test]
fn additive_model_gap_is_non_negative_with_closed_form() {
    let w = [0.3, 1.2, 0.7, 2.0];
    let mut weights = w.to_vec();
    weights.extend([1.0; 4]);
    let model = linear(weights, 2);
    let ds = Dataset::new(vec![0.5, 0.9, 0.2, 0.6, 0.8, 0.1, 0.4, 0.3], 2, 2, vec![0, 0], 2).unwrap();
    let maps: Vec<Vec<f64>> = (0..2)
        .map(|i| ds.image(i).iter().zip(&w).map(|(a, b)| a * b).collect())
        .collect();
    let curve = pixel_perturbation_gap_with_maps(&model, &ds, &maps, &[25.0, 50.0, 75.0]).unwrap();
    for (k, &(_, gap)) in curve.points.iter().enumerate() {
        let count = k + 1;
        let mut expect = 0.0;
        for m in &maps {
            let mut s = m.clone();
            s.sort_by(|a, b| b.total_cmp(a));
            let f: f64 = s.iter().sum();
            let top: f64 = s[..count].iter().sum();
            let bottom: f64 = s[4 - count..].iter().sum();
            expect += (top - bottom) / f / 2.0;
        }
        assert!(gap >= 0.0);
        assert!((gap - expect).abs() <= 1e-12, "{gap} vs {expect}");
    }
}

#[test]
fn activation_maximization_ascends_a_linear_logit() {
    let model = linear(vec![0.5, -0.5, 1.0, 0.2, 0.0, 0.0, 0.0, 0.0], 2);
    let mut last = f64::NEG_INFINITY;
    for steps in 1..6 {
        let x = activation_maximization(&model, 0, steps, 0.05, 1).unwrap();
        let v = logit(&model, &x, 0);
        assert!(v > last, "step {steps}: {v} ≤ {last}");
        last = v;
    }
}
