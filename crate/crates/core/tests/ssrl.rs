use proptest::prelude::*;
use steerlabel::ssrl::{
    error_decomposition, make_task, run_configuration, train, Dataset, GaussianTask, LinearRegressor, ModelKind,
    TrainConfig, TrainMode, TrainingSet,
};

fn task(bias_g: f64, sigma_2: f64, seed: u64) -> GaussianTask {
    GaussianTask {
        sigma_y: 1.0,
        sigma_1: 0.5,
        sigma_2,
        bias_g,
        n: 100_000,
        seed,
    }
}

fn fit(data: &Dataset, mode: TrainMode) -> LinearRegressor {
    let mut f = LinearRegressor::default();
    let stats = train(&mut f, data, mode, &TrainConfig::default()).unwrap();
    assert!(stats.converged);
    f
}

/// Ordinary least-squares standard errors of (weight, intercept).
fn standard_errors(set: &TrainingSet, f: &LinearRegressor) -> (f64, f64) {
    let n = set.inputs.len() as f64;
    let mean = set.inputs.iter().sum::<f64>() / n;
    let sxx: f64 = set.inputs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let rss: f64 = set
        .inputs
        .iter()
        .zip(&set.targets)
        .map(|(x, t)| (f.weight * x + f.intercept - t).powi(2))
        .sum();
    let s2 = rss / (n - 2.0);
    ((s2 / sxx).sqrt(), (s2 * (1.0 / n + mean * mean / sxx)).sqrt())
}

#[test]
fn ssil_reaches_the_conditional_expectation() {
    let t = task(0.2, 0.5, 1);
    let data = make_task(&t).unwrap();
    let f = fit(&data, TrainMode::Ssil);
    let (se_w, se_b) = standard_errors(&data.ssil_set(), &f);
    assert!((t.optimal_weight() - 0.8).abs() < 1e-15);
    assert!((f.weight - 0.8).abs() < 3.0 * se_w, "weight {} (se {se_w})", f.weight);
    assert!(
        (f.intercept - 0.2).abs() < 3.0 * se_b,
        "intercept {} (se {se_b})",
        f.intercept
    );
}

#[test]
fn unbiased_pseudo_labels_give_the_supervised_solution() {
    let data = make_task(&task(0.0, 0.5, 2)).unwrap();
    let ssil = fit(&data, TrainMode::Ssil);
    let sup = fit(&data, TrainMode::Supervised);
    let (se_w, se_b) = standard_errors(&data.ssil_set(), &ssil);
    assert!((ssil.weight - sup.weight).abs() < 3.0 * se_w, "{ssil:?} vs {sup:?}");
    assert!(
        (ssil.intercept - sup.intercept).abs() < 3.0 * se_b,
        "{ssil:?} vs {sup:?}"
    );
}

#[test]
fn ssil_optimum_ignores_pseudo_label_noise() {
    let fits: Vec<_> = [0.1, 0.5]
        .iter()
        .map(|&s2| {
            let data = make_task(&task(0.2, s2, 3)).unwrap();
            let f = fit(&data, TrainMode::Ssil);
            (f, standard_errors(&data.ssil_set(), &f))
        })
        .collect();
    let ((a, (wa, ba)), (b, (wb, bb))) = (fits[0], fits[1]);
    assert!((a.weight - b.weight).abs() < 3.0 * wa.hypot(wb), "{a:?} vs {b:?}");
    assert!((a.intercept - b.intercept).abs() < 3.0 * ba.hypot(bb), "{a:?} vs {b:?}");
}

#[test]
fn decomposition_holds_across_seeds() {
    for seed in 0..5 {
        let t = task(0.2, 0.5, 100 + seed);
        let data = make_task(&t).unwrap();
        let ssil = fit(&data, TrainMode::Ssil);
        let sup = fit(&data, TrainMode::Supervised);
        let rep = error_decomposition(&ssil, &sup, &t, 100_000).unwrap();
        assert!((rep.variance_term - 0.2).abs() < 1e-15);
        assert!((rep.lhs - 0.24).abs() < 0.01, "seed {seed}: {rep:?}");
        assert!((rep.gap_term - 0.04).abs() < 0.005, "seed {seed}: {rep:?}");
        assert!(rep.identity_error() < 0.05, "seed {seed}: {rep:?}");
    }
}

#[test]
fn better_pseudo_predictor_gives_better_regressor() {
    let cfg = TrainConfig::default();
    let rows: Vec<_> = [0.0, 0.2, 0.5]
        .iter()
        .map(|&b| run_configuration(&task(b, 0.5, 9), ModelKind::Linear, &cfg, 100_000).unwrap())
        .collect();
    for (row, expected) in rows.iter().zip([0.20, 0.24, 0.45]) {
        assert!((row.report.lhs - expected).abs() < 0.01, "{row:?}");
        assert!((row.report.closed_form_lhs - expected).abs() < 1e-12);
    }
    assert!(rows[0].report.gap_term < 1e-4, "{:?}", rows[0]);
    assert!(rows.windows(2).all(|w| w[0].report.lhs < w[1].report.lhs));
}

#[test]
fn mlp_shows_the_same_trend() {
    let cfg = TrainConfig {
        lr: 0.05,
        epochs: 2000,
        momentum: 0.9,
        ..Default::default()
    };
    let lhs: Vec<f64> = [0.0, 0.2, 0.5]
        .iter()
        .map(|&b| {
            let t = GaussianTask {
                n: 5_000,
                ..task(b, 0.5, 5)
            };
            run_configuration(&t, ModelKind::Mlp, &cfg, 50_000).unwrap().report.lhs
        })
        .collect();
    for (got, expected) in lhs.iter().zip([0.20, 0.24, 0.45]) {
        assert!((got - expected).abs() < 0.02, "{lhs:?}");
    }
    assert!(lhs.windows(2).all(|w| w[0] < w[1]), "{lhs:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn test_error_grows_with_pseudo_label_bias(seed in 0u64..1000, b1 in 0.0f64..0.6, extra in 0.05f64..0.6, sign in prop::bool::ANY) {
        let s = if sign { 1.0 } else { -1.0 };
        let lhs = |b: f64| {
            run_configuration(&GaussianTask { n: 20_000, ..task(b, 0.5, seed) }, ModelKind::Linear, &TrainConfig::default(), 20_000)
                .unwrap()
                .report
                .lhs
        };
        prop_assert!(lhs(s * b1) <= lhs(s * (b1 + extra)));
    }
}
