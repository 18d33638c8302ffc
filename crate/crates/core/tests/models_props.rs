use fedpoison_core::models::{local_train, loss, loss_and_gradient, loss_gradient};
use fedpoison_core::{BoxDomain, Dataset, ModelKind, ModelSpec, ParamVector, SimRng, TrainConfig};

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn random_dataset(kind: ModelKind, n: usize, d: usize, classes: usize, rng: &mut SimRng) -> Dataset {
    let features: Vec<f64> = (0..n * d).map(|_| rng.uniform()).collect();
    match kind {
        ModelKind::LinearRegression => {
            let targets = (0..n).map(|_| 2.0 * rng.normal() + 0.5).collect();
            Dataset::regression(features, d, targets).unwrap()
        }
        _ => {
            let labels = (0..n).map(|i| if i < classes { i } else { rng.below(classes) }).collect();
            Dataset::classification(features, d, labels, classes).unwrap()
        }
    }
}

fn random_params(dim: usize, scale: f64, rng: &mut SimRng) -> ParamVector {
    ParamVector::new((0..dim).map(|_| scale * rng.normal()).collect()).unwrap()
}

/// Smallest distance of any piecewise-linear kink argument from its
/// breakpoint, evaluated independently of the library.
fn kink_gap(spec: &ModelSpec, p: &[f64], data: &Dataset) -> f64 {
    let d = spec.input_dim;
    let mut gap = f64::INFINITY;
    for i in 0..data.len() {
        let x = data.row(i);
        match spec.kind {
            ModelKind::LinearRegression => {}
            ModelKind::LinearSvm => {
                let y = if data.labels().classes().unwrap()[i] == 1 { 1.0 } else { -1.0 };
                let f: f64 = p[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[d];
                gap = gap.min((1.0 - y * f).abs());
            }
            ModelKind::Mlp => {
                let h = spec.hidden_dim;
                for j in 0..h {
                    let z: f64 = p[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[d * h + j];
                    gap = gap.min(z.abs());
                }
            }
        }
    }
    gap
}

fn central_difference(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Vec<f64> {
    let base = params.as_slice().to_vec();
    (0..base.len())
        .map(|k| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[k] += H;
            minus[k] -= H;
            let lp = loss(spec, &ParamVector::new(plus).unwrap(), data).unwrap();
            let lm = loss(spec, &ParamVector::new(minus).unwrap(), data).unwrap();
            (lp - lm) / (2.0 * H)
        })
        .collect()
}

fn check_gradients(kind: ModelKind, seed: u64) {
    let mut rng = SimRng::seed_from(seed);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 100 {
        attempts += 1;
        assert!(attempts < 1000, "too many instances sat on a kink");
        let d = 1 + rng.below(4);
        let classes = 2 + rng.below(3);
        let spec = match kind {
            ModelKind::LinearRegression => ModelSpec::linear_regression(d),
            ModelKind::LinearSvm => ModelSpec::linear_svm(d),
            ModelKind::Mlp => ModelSpec::mlp(d, 1 + rng.below(5), classes),
        };
        let data = random_dataset(kind, 5 + rng.below(20), d, spec.num_classes, &mut rng);
        let params = random_params(spec.param_count(), 0.7, &mut rng);
        // A finite difference straddling a kink is not a derivative.
        if kink_gap(&spec, params.as_slice(), &data) < 1e-3 {
            continue;
        }
        let analytic = loss_gradient(&spec, &params, &data).unwrap();
        let numeric = central_difference(&spec, &params, &data);
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.norm().max(numeric.iter().map(|v| v * v).sum::<f64>().sqrt()).max(1e-8);
        assert!(
            diff / scale <= REL_TOL,
            "{kind:?} instance {checked}: relative gradient error {}",
            diff / scale
        );
        checked += 1;
    }
}

#[test]
fn regression_gradient_matches_finite_differences() {
    check_gradients(ModelKind::LinearRegression, 1);
}

#[test]
fn svm_gradient_matches_finite_differences() {
    check_gradients(ModelKind::LinearSvm, 2);
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    check_gradients(ModelKind::Mlp, 3);
}

#[test]
fn loss_and_gradient_agree_with_separate_calls() {
    let mut rng = SimRng::seed_from(9);
    let spec = ModelSpec::mlp(3, 4, 3);
    let data = random_dataset(ModelKind::Mlp, 30, 3, 3, &mut rng);
    let params = random_params(spec.param_count(), 0.5, &mut rng);
    let (l, g) = loss_and_gradient(&spec, &params, &data).unwrap();
    assert_eq!(l, loss(&spec, &params, &data).unwrap());
    assert_eq!(g, loss_gradient(&spec, &params, &data).unwrap());
}

#[test]
fn full_batch_small_step_descends() {
    for seed in 0..50 {
        let mut rng = SimRng::seed_from(100 + seed);
        let d = 1 + rng.below(5);
        let spec = ModelSpec::linear_regression(d);
        let n = 10 + rng.below(40);
        let data = random_dataset(ModelKind::LinearRegression, n, d, 1, &mut rng);
        let start = random_params(spec.param_count(), 1.0, &mut rng);
        let cfg = TrainConfig { epochs: 1, lr: 1e-3, batch: n };
        let domain = BoxDomain::symmetric(spec.param_count(), 1e6).unwrap();
        let end = local_train(&spec, &start, &data, &cfg, &domain, &mut rng).unwrap();
        let before = loss(&spec, &start, &data).unwrap();
        let after = loss(&spec, &end, &data).unwrap();
        assert!(after <= before, "seed {seed}: {after} > {before}");
    }
}

#[test]
fn training_is_bit_reproducible_and_stays_in_the_box() {
    let mut rng = SimRng::seed_from(4);
    let spec = ModelSpec::mlp(4, 6, 3);
    let data = random_dataset(ModelKind::Mlp, 64, 4, 3, &mut rng);
    let start = random_params(spec.param_count(), 0.3, &mut rng);
    let cfg = TrainConfig { epochs: 3, lr: 0.5, batch: 8 };
    let domain = BoxDomain::symmetric(spec.param_count(), 0.4).unwrap();
    let a = local_train(&spec, &start, &data, &cfg, &domain, &mut SimRng::seed_from(77)).unwrap();
    let b = local_train(&spec, &start, &data, &cfg, &domain, &mut SimRng::seed_from(77)).unwrap();
    assert_eq!(a, b);
    assert!(domain.contains(&a));
}

#[test]
fn loss_ignores_row_order() {
    let mut rng = SimRng::seed_from(5);
    for kind in [ModelKind::LinearRegression, ModelKind::LinearSvm, ModelKind::Mlp] {
        let spec = match kind {
            ModelKind::LinearRegression => ModelSpec::linear_regression(3),
            ModelKind::LinearSvm => ModelSpec::linear_svm(3),
            ModelKind::Mlp => ModelSpec::mlp(3, 5, 4),
        };
        let data = random_dataset(kind, 40, 3, spec.num_classes, &mut rng);
        let params = random_params(spec.param_count(), 0.8, &mut rng);
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng.shuffle(&mut order);
        let shuffled = data.subset(&order).unwrap();
        let a = loss(&spec, &params, &data).unwrap();
        let b = loss(&spec, &params, &shuffled).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{kind:?}: {a} vs {b}");
    }
}
