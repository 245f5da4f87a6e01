use margreg::data::{synth_digits, Dataset};
use margreg::evalrep::{
    accuracy, accuracy_from, auroc, density_robustness, format_float, relative_gradient_robustness, Table,
};
use margreg::model::{Activation, Layer, Model};

fn constant_model(features: usize, bias: Vec<f64>) -> Model {
    let c = bias.len();
    Model::from_layers(
        vec![Layer::new(features, c, vec![0.0; features * c], bias).unwrap()],
        Activation::Relu,
    )
    .unwrap()
}

#[test]
fn perfect_model_scores_one() {
    let ds = synth_digits(3, 7, 5, 0.0, 0).unwrap();
    // Template dot products: each template matches itself best.
    let templates: Vec<f64> = (0..3).flat_map(|c| ds.image(c).to_vec()).collect();
    let bias: Vec<f64> = (0..3).map(|c| -0.5 * ds.image(c).iter().map(|v| v * v).sum::<f64>()).collect();
    let model = Model::from_layers(vec![Layer::new(49, 3, templates, bias).unwrap()], Activation::Relu).unwrap();
    assert_eq!(accuracy(&model, &ds).unwrap().overall, 1.0);
}

#[test]
fn constant_prediction_on_balanced_groups() {
    let labels = vec![0, 1, 0, 1, 0, 1];
    let r = accuracy_from(&[0; 6], &labels, Some(&labels)).unwrap();
    assert_eq!(r.overall, 0.5);
    assert_eq!(r.worst_group, Some(0.0));
    assert_eq!(r.per_group, vec![(0, 1.0), (1, 0.0)]);
}

#[test]
fn worst_group_never_exceeds_overall() {
    let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let groups: Vec<usize> = (0..40).map(|i| (i * 7) % 4).collect();
    for shift in 0..5 {
        let preds: Vec<usize> = (0..40).map(|i| usize::from((i + shift) % 3 == 0)).collect();
        let r = accuracy_from(&preds, &labels, Some(&groups)).unwrap();
        assert!(r.worst_group.unwrap() <= r.overall);
    }
}

#[test]
fn auroc_is_antisymmetric() {
    let a = [0.3, 0.9, 0.1, 0.5, 0.5];
    let b = [0.2, 0.5, 0.7];
    let (ab, ba) = (auroc(&a, &b).unwrap(), auroc(&b, &a).unwrap());
    assert!((ab + ba - 1.0).abs() <= 1e-15);
    assert_eq!(auroc(&[1.0, 2.0], &[0.0]).unwrap(), 1.0);
    assert_eq!(auroc(&[1.0], &[1.0]).unwrap(), 0.5);
}

fn small_set() -> Dataset {
    synth_digits(3, 7, 4, 0.2, 2).unwrap()
}

#[test]
fn constant_logits_give_class_count_at_every_sigma() {
    let ds = small_set();
    let model = constant_model(49, vec![0.3, -1.0, 4.0]);
    let r = density_robustness(&model, &ds, &[0.0, 0.1, 1.0], 7).unwrap();
    assert!(r.finite);
    for y in r.curve.values() {
        assert!((y - 3.0).abs() <= 1e-12);
    }
}

#[test]
fn gradient_curve_is_zero_at_zero_sigma_and_zero_for_linear_models() {
    let ds = small_set();
    let w: Vec<f64> = (0..147).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
    let linear = Model::from_layers(vec![Layer::new(49, 3, w, vec![0.0; 3]).unwrap()], Activation::Relu).unwrap();
    let r = relative_gradient_robustness(&linear, &ds, &[0.0, 0.5], 1).unwrap();
    assert_eq!(r.skipped, 0);
    assert!(r.curve.values().iter().all(|v| v.abs() <= 1e-12));

    let net = Model::init(&[49, 8, 3], Activation::Softplus, 4).unwrap();
    let r = relative_gradient_robustness(&net, &ds, &[0.0, 0.5], 1).unwrap();
    assert_eq!(r.curve.values()[0], 0.0);
    assert!(r.curve.values()[1] > 0.0);
}

#[test]
fn robustness_curves_are_deterministic_for_a_seed() {
    let ds = small_set();
    let net = Model::init(&[49, 8, 3], Activation::Softplus, 5).unwrap();
    let grid = [0.0, 0.05, 0.2];
    let a = density_robustness(&net, &ds, &grid, 11).unwrap();
    let b = density_robustness(&net, &ds, &grid, 11).unwrap();
    assert_eq!(a, b);
    let c = density_robustness(&net, &ds, &grid, 12).unwrap();
    assert_ne!(a.curve.values()[2], c.curve.values()[2]);
}

#[test]
fn unsorted_sigma_grid_is_rejected() {
    let ds = small_set();
    let net = Model::init(&[49, 4, 3], Activation::Relu, 0).unwrap();
    assert!(density_robustness(&net, &ds, &[0.2, 0.1], 0).is_err());
    assert!(relative_gradient_robustness(&net, &ds, &[], 0).is_err());
}

#[test]
fn csv_round_trips_floats_exactly() {
    let ds = small_set();
    let net = Model::init(&[49, 4, 3], Activation::Relu, 0).unwrap();
    let curve = density_robustness(&net, &ds, &[0.0, 0.3], 2).unwrap().curve;
    let text = curve.to_table().to_csv();
    let back = Table::from_csv(&text).unwrap();
    assert_eq!(back.to_csv(), text);
    for v in curve.values() {
        assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
    }
}
