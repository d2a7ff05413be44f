//! The Hankel predictor against exact state-space rollouts.

mod common;

use common::{rng, uniform_matrix};
use ddmpc::linalg::{pinv, RANK_RTOL};
use ddmpc::plants::LtiPlant;
use ddmpc::predictor::{compute_g_matrix, predict, InitWindow};
use ddmpc::trajectory::{is_persistently_exciting, partition_hankel, record_episode};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

#[test]
fn matches_rollout_on_random_minimal_plants() {
    for seed in 0..6u64 {
        let mut r = rng(100 + seed);
        let h = r.random_range(2..=6);
        let m = r.random_range(1..=3);
        let c = r.random_range(1..=3);
        let plant = LtiPlant::random_stable(h, m, c, 0.9, seed);
        // n_ini >= h covers the observability index of any (A, C).
        let (n_ini, l) = (h, 4);
        let depth = n_ini + l;
        let n = (m + 1) * (depth + h) - 1 + 40;
        let u = uniform_matrix(n, m, 1.0, 200 + seed);
        assert!(is_persistently_exciting(&u, depth + h).unwrap());
        let x0 = DVector::from_fn(h, |_, _| r.random_range(-1.0..1.0));
        let mut p = plant.clone().with_state(x0);
        let traj = record_episode(&mut p, &u, 0).unwrap();
        let g = compute_g_matrix(&partition_hankel(&traj, n_ini, l).unwrap()).unwrap();

        for w in 0..50u64 {
            let xw = DVector::from_fn(h, |_, _| r.random_range(-2.0..2.0));
            let uw = uniform_matrix(depth, m, 1.5, 1000 * seed + w);
            let yw = plant.rollout(&xw, &uw);
            let win = InitWindow::new(uw.rows(0, n_ini).into_owned(), yw.rows(0, n_ini).into_owned()).unwrap();
            let pred = predict(&g, &win, &uw.rows(n_ini, l).into_owned()).unwrap();
            let err = relative_error(&pred, &yw.rows(n_ini, l).into_owned());
            assert!(err <= 1e-6, "seed {seed} window {w}: relative error {err:e}");
        }
    }
}

#[test]
fn pseudo_inverse_identities() {
    for seed in 0..10u64 {
        // Rank-deficient wide matrix.
        let a = uniform_matrix(6, 3, 1.0, seed) * uniform_matrix(3, 9, 1.0, seed + 50);
        let ap = pinv(&a, RANK_RTOL).unwrap();
        assert!((&a * &ap * &a - &a).norm() <= 1e-9 * a.norm());
        assert!((&ap * &a * &ap - &ap).norm() <= 1e-9 * ap.norm());
        let aap = &a * &ap;
        assert!((&aap - aap.transpose()).norm() <= 1e-9);
        let apa = &ap * &a;
        assert!((&apa - apa.transpose()).norm() <= 1e-9);
    }
}

#[test]
fn noise_free_prediction_is_insensitive_to_extra_data() {
    let plant = LtiPlant::random_stable(3, 1, 1, 0.8, 7);
    let u = uniform_matrix(200, 1, 1.0, 8);
    let mut p = plant.clone();
    let traj = record_episode(&mut p, &u, 0).unwrap();
    let short = traj.slice(0, 60).unwrap();
    let g_long = compute_g_matrix(&partition_hankel(&traj, 3, 5).unwrap()).unwrap();
    let g_short = compute_g_matrix(&partition_hankel(&short, 3, 5).unwrap()).unwrap();
    let uw = uniform_matrix(8, 1, 1.0, 9);
    let yw = plant.rollout(&DVector::from_element(3, 0.3), &uw);
    let win = InitWindow::new(uw.rows(0, 3).into_owned(), yw.rows(0, 3).into_owned()).unwrap();
    let f = uw.rows(3, 5).into_owned();
    let a = predict(&g_long, &win, &f).unwrap();
    let b = predict(&g_short, &win, &f).unwrap();
    assert!(relative_error(&a, &b) < 1e-8);
}
