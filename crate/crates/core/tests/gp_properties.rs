mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use selfid_core::*;

fn matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn dataset(max_n: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1..=max_n, 1..=3usize, 1..=3usize).prop_flat_map(|(n, din, dout)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, din), n),
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dout), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn posterior_mean_matches_direct_solve(
        (x, y) in dataset(8),
        l in 0.3..3.0f64,
        log_jitter in -4.0..0.0f64,
        q in prop::collection::vec(-3.0..3.0f64, 3),
    ) {
        let jitter = 10f64.powf(log_jitter);
        let gp = GpModel::fit(matrix(&x), matrix(&y), KernelParams::new(l, jitter).unwrap()).unwrap();
        let query = &q[..x[0].len()];
        let got = gp.predict_mean(query).unwrap();
        let want = common::gp_mean(&x, &y, l, jitter, query);
        let scale = y.iter().flatten().chain(&want).fold(1e-300f64, |m, v| m.max(v.abs()));
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-8 * scale, "{g} vs {w}");
        }
    }

    #[test]
    fn extension_agrees_with_refit((x, y) in dataset(12), split in 1..12usize, l in 0.3..3.0f64) {
        prop_assume!(split < x.len());
        let p = KernelParams::new(l, 1e-2).unwrap();
        let head = GpModel::fit(matrix(&x[..split]), matrix(&y[..split]), p).unwrap();
        let grown = head.extended(&matrix(&x[split..]), &matrix(&y[split..])).unwrap();
        let full = GpModel::fit(matrix(&x), matrix(&y), p).unwrap();
        let q: Vec<f64> = x[0].iter().map(|v| v + 0.1).collect();
        let diff = (grown.predict_mean(&q).unwrap() - full.predict_mean(&q).unwrap()).amax();
        prop_assert!(diff <= 1e-9 * (1.0 + full.dual_weights().amax()));
    }
}

#[test]
fn interpolates_separated_training_points() {
    // Points on a grid four length scales apart.
    let l = 0.5;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            let p = vec![2.0 * i as f64, 2.0 * j as f64];
            y.push(vec![p[0].sin() * 4.0, p[1] - p[0]]);
            x.push(p);
        }
    }
    let gp = GpModel::fit(matrix(&x), matrix(&y), KernelParams::new(l, 1e-8).unwrap()).unwrap();
    let bound = 1e-5 * (1.0 + y.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())));
    for (xi, yi) in x.iter().zip(&y) {
        let p = gp.predict_mean(xi).unwrap();
        for (a, b) in p.iter().zip(yi) {
            assert!((a - b).abs() <= bound);
        }
    }
}

#[test]
fn ill_conditioned_fit_reports_final_jitter() {
    let x = vec![vec![0.0], vec![0.0]];
    let y = vec![vec![1.0], vec![-1.0]];
    match GpModel::fit_with_retries(matrix(&x), matrix(&y), KernelParams::new(1.0, 0.0).unwrap(), 0) {
        Err(Error::IllConditioned { jitter }) => assert_eq!(jitter, 0.0),
        other => panic!("expected an ill-conditioned error, got {other:?}"),
    }
    // One retry from 1e-3 is enough for exact duplicates.
    let gp = GpModel::fit_with_retries(matrix(&x), matrix(&y), KernelParams::new(1.0, 1e-3).unwrap(), 1).unwrap();
    assert!(gp.params().noise_jitter >= 1e-3);
    assert!(gp.predict_mean(&[0.0]).unwrap()[0].abs() < 1e-9);
}
