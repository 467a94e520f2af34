use irs_doa::dataset::{denormalize_label, generate_training_set_with, DatasetConfig};
use irs_doa::exec::Execution;
use irs_doa::SceneGeometry;

/// Count of `k * step` values (k = 0..=max/step) falling in `[lo, hi)`, or
/// `[lo, hi]` for the last bin.
fn grid_points_in(lo: f64, hi: f64, step: f64, max: f64, last: bool) -> usize {
    let n = (max / step).round() as usize;
    (0..=n)
        .map(|k| k as f64 * step)
        .filter(|&v| v >= lo - 1e-9 && (v < hi - 1e-9 || (last && v <= hi + 1e-9)))
        .count()
}

fn check_histogram(values: &[f64], max: f64, bins: usize, step: f64) {
    let n = values.len() as f64;
    let total = (max / step).round() as usize + 1;
    let width = max / bins as f64;
    for b in 0..bins {
        let (lo, hi) = (b as f64 * width, (b + 1) as f64 * width);
        let last = b + 1 == bins;
        let p = grid_points_in(lo, hi, step, max, last) as f64 / total as f64;
        let count = values
            .iter()
            .filter(|&&v| v >= lo - 1e-9 && (v < hi - 1e-9 || (last && v <= hi + 1e-9)))
            .count() as f64;
        let sigma = (n * p * (1.0 - p)).sqrt();
        assert!(
            (count - n * p).abs() <= 3.0 * sigma,
            "bin [{lo}, {hi}) holds {count}, expected {:.1} +- {:.1}",
            n * p,
            3.0 * sigma
        );
    }
}

#[test]
fn training_labels_are_uniform_on_the_grid() {
    let cfg = DatasetConfig {
        n_train: 25_000,
        snapshots: 1,
        seed: 11,
        ..Default::default()
    };
    let ds =
        generate_training_set_with(&SceneGeometry::preset(), &cfg, Execution::Parallel).unwrap();
    let mut theta = Vec::new();
    let mut phi = Vec::new();
    for set in [&ds.train, &ds.validation] {
        for row in set.labels().rows() {
            let d = denormalize_label([row[0], row[1]]).unwrap();
            // labels sit on the 0.5 degree grid
            assert!((d.theta() * 2.0 - (d.theta() * 2.0).round()).abs() < 1e-9);
            assert!((d.phi() * 2.0 - (d.phi() * 2.0).round()).abs() < 1e-9);
            theta.push(d.theta());
            phi.push(d.phi());
        }
    }
    assert_eq!(theta.len(), 25_000);
    check_histogram(&theta, 90.0, 9, 0.5);
    check_histogram(&phi, 180.0, 18, 0.5);
}

#[test]
fn split_is_disjoint_and_sized() {
    let cfg = DatasetConfig {
        n_train: 1_000,
        snapshots: 2,
        seed: 3,
        ..Default::default()
    };
    let ds =
        generate_training_set_with(&SceneGeometry::preset(), &cfg, Execution::Sequential).unwrap();
    assert_eq!(ds.validation.len(), 200);
    assert_eq!(ds.train.len(), 800);
    let key =
        |r: ndarray::ArrayView1<f64>| r.iter().take(4).map(|v| v.to_bits()).collect::<Vec<_>>();
    let train: std::collections::HashSet<_> =
        ds.train.inputs().rows().into_iter().map(key).collect();
    assert!(ds
        .validation
        .inputs()
        .rows()
        .into_iter()
        .all(|r| !train.contains(&key(r))));
}

#[test]
fn generation_is_independent_of_execution_mode() {
    let cfg = DatasetConfig {
        n_train: 300,
        snapshots: 3,
        seed: 5,
        ..Default::default()
    };
    let geom = SceneGeometry::preset();
    let a = generate_training_set_with(&geom, &cfg, Execution::Sequential).unwrap();
    let b = generate_training_set_with(&geom, &cfg, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}
