use isopsm::inference::{bootstrap, bootstrap_from_indices, percentile_quantile, resample_indices};
use isopsm::pipeline::{point_estimate, EstimatorKind, PipelineOptions};
use isopsm::simulation::{generate, DgpConfig};
use isopsm::{Link, ObservationSet, Target};
use rand::seq::SliceRandom;

fn sample(n: usize, seed: u64) -> ObservationSet {
    generate(&DgpConfig::new(1, 1, 1, Link::Logistic, n, seed).unwrap())
        .unwrap()
        .data
}

fn pava_mle(target: Target) -> impl Fn(&ObservationSet) -> isopsm::Result<f64> + Sync {
    move |d| point_estimate(d, EstimatorKind::PavaMle, target, &PipelineOptions::default())
}

#[test]
fn quantile_examples() {
    assert_eq!(percentile_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.5);
    assert_eq!(percentile_quantile(&[5.0], 0.9).unwrap(), 5.0);
    let values: Vec<f64> = (0..100).map(f64::from).collect();
    assert!((percentile_quantile(&values, 0.025).unwrap() - 2.475).abs() < 1e-12);
}

#[test]
fn constant_estimator_has_no_spread() {
    let data = sample(50, 1);
    let report = bootstrap(&data, |_| Ok(4.25), 200, 3).unwrap();
    assert_eq!(report.sd, 0.0);
    assert_eq!((report.q025, report.q975, report.mean), (4.25, 4.25, 4.25));
}

#[test]
fn reruns_are_bitwise_identical() {
    let data = sample(200, 2);
    let a = bootstrap(&data, pava_mle(Target::Att), 100, 17).unwrap();
    let b = bootstrap(&data, pava_mle(Target::Att), 100, 17).unwrap();
    assert_eq!(a, b);
    assert!(a.q025 <= a.q975 && a.sd >= 0.0);
    assert_eq!(a.replicates.len() + a.failed, 100);
}

#[test]
fn permuted_units_give_the_same_bootstrap() {
    let data = sample(150, 3);
    let mut perm: Vec<usize> = (0..data.n()).collect();
    perm.shuffle(&mut isopsm::rng::keyed_stream(3, &[]));
    // unit perm[i] of `data` sits at position i of `permuted`
    let permuted = data.resample(&perm).unwrap();
    let mut position = vec![0; data.n()];
    for (i, &u) in perm.iter().enumerate() {
        position[u] = i;
    }
    let est = pava_mle(Target::Att);
    let b = 60;
    let original: Vec<Vec<usize>> = (0..b).map(|r| resample_indices(data.n(), 5, r)).collect();
    let relabeled: Vec<Vec<usize>> = original
        .iter()
        .map(|s| s.iter().map(|&u| position[u]).collect())
        .collect();
    let a = bootstrap_from_indices(&data, &est, &original, 5).unwrap();
    let p = bootstrap_from_indices(&permuted, &est, &relabeled, 5).unwrap();
    assert_eq!(a.replicates, p.replicates);
    assert!((a.point_estimate - p.point_estimate).abs() < 1e-12);
}

#[test]
fn shifting_outcomes_shifts_a_location_equivariant_bootstrap() {
    let data = sample(120, 5);
    let c = -3.75;
    let mean_y = |d: &ObservationSet| Ok(d.y().iter().sum::<f64>() / d.n() as f64);
    let a = bootstrap(&data, mean_y, 150, 11).unwrap();
    let b = bootstrap(&data.with_shifted_outcomes(c), mean_y, 150, 11).unwrap();
    for (x, y) in a.replicates.iter().zip(&b.replicates) {
        assert!((y - x - c).abs() < 1e-12);
    }
    assert!((b.q025 - a.q025 - c).abs() < 1e-12);
    assert!((b.q975 - a.q975 - c).abs() < 1e-12);
}

#[test]
fn failures_are_counted_or_fatal() {
    let data = sample(60, 6);
    let flaky = |d: &ObservationSet| {
        if d.y()[0] > 2.0 {
            Err(isopsm::Error::NoDescent)
        } else {
            Ok(1.0)
        }
    };
    match bootstrap(&data, flaky, 200, 1) {
        Ok(r) => assert!(r.failed as f64 <= 0.05 * 200.0),
        Err(e) => assert!(matches!(e, isopsm::Error::TooManyFailures { .. })),
    }
    let always = |_: &ObservationSet| -> isopsm::Result<f64> { Err(isopsm::Error::NoDescent) };
    assert!(bootstrap(&data, always, 10, 1).is_err());
}
