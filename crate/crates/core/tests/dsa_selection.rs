//! Dataset selection on banks of LTI variants.

mod common;

use common::uniform_matrix;
use ddmpc::dsa::{score_dataset, select_dataset, solve_window_coefficients, DatasetBank, SampleWindow};
use ddmpc::linalg::stack_rows;
use ddmpc::plants::LtiPlant;
use ddmpc::trajectory::{record_episode, Trajectory};
use nalgebra::{DMatrix, DVector};

const N: usize = 120;
const N_INI: usize = 2;
const L: usize = 4;

/// Output noise comparable to the surrogate's; with the unit residual
/// weight the score separates plants once noise dominates the Hankel tail.
fn gain_plant(gain: f64, noise: f64) -> LtiPlant {
    LtiPlant::scalar(0.7, gain, 1.0, 0.0, 0.02).with_noise(noise)
}

fn record(gain: f64, noise: f64, len: usize, seed: u64) -> Trajectory {
    let u = uniform_matrix(len, 1, 1.0, seed);
    record_episode(&mut gain_plant(gain, noise), &u, seed + 7).unwrap()
}

fn bank(gains: &[f64], seed: u64) -> DatasetBank {
    let data = gains
        .iter()
        .enumerate()
        .map(|(i, &g)| (format!("gain={g}"), record(g, 0.05, N, seed + i as u64), None))
        .collect();
    DatasetBank::new(data, N_INI, L, 1).unwrap()
}

#[test]
fn picks_the_generating_gain() {
    let b = bank(&[1.0, 1.5, 2.0], 1);
    let mut hits = 0;
    for seed in 0..100u64 {
        let run = record(1.5, 0.05, 40, 1000 + seed);
        let win = SampleWindow::from_trajectory(&run, 20, N_INI + L).unwrap();
        if select_dataset(&b, &win, 1.0).unwrap().0 == 1 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "selected the right entry {hits}/100 times");
}

#[test]
fn own_window_scores_no_worse_than_foreign_plant() {
    let mut wins = 0;
    for seed in 0..50u64 {
        let own = record(1.0, 0.05, N, 500 + seed);
        let other = record(2.0, 0.05, N, 900 + seed);
        let b = DatasetBank::new(vec![("own".into(), own.clone(), None), ("other".into(), other, None)], N_INI, L, 1)
            .unwrap();
        let win = SampleWindow::from_trajectory(&own, 30, N_INI + L).unwrap();
        let s = b.scores(&win, 1.0);
        if s[0] <= s[1] {
            wins += 1;
        }
    }
    assert!(wins >= 45, "own dataset scored lower in {wins}/50 trials");
}

#[test]
fn permuting_entries_permutes_scores() {
    let gains = [1.0, 1.5, 2.0, 0.5];
    let b = bank(&gains, 3);
    let win = SampleWindow::from_trajectory(&record(1.2, 0.05, 30, 44), 10, N_INI + L).unwrap();
    let s = b.scores(&win, 1.0);
    let perm = [2usize, 0, 3, 1];
    let data = perm
        .iter()
        .map(|&i| {
            let e = &b.entries()[i];
            (e.label.clone(), e.trajectory.clone(), None)
        })
        .collect();
    let b2 = DatasetBank::new(data, N_INI, L, 1).unwrap();
    let s2 = b2.scores(&win, 1.0);
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(s2[k], s[i]);
    }
}

/// Direct solve of the full KKT system
/// `[2(I + λHyᵀHy)  Huᵀ; Hu  0] [K; μ] = [2λHyᵀy; u]`.
fn kkt_oracle(hu: &DMatrix<f64>, hy: &DMatrix<f64>, us: &DVector<f64>, ys: &DVector<f64>, lam: f64) -> DVector<f64> {
    let w = hu.ncols();
    let r = hu.nrows();
    let mut kkt = DMatrix::zeros(w + r, w + r);
    let top = (DMatrix::identity(w, w) + hy.transpose() * hy * lam) * 2.0;
    kkt.view_mut((0, 0), (w, w)).copy_from(&top);
    kkt.view_mut((0, w), (w, r)).copy_from(&hu.transpose());
    kkt.view_mut((w, 0), (r, w)).copy_from(hu);
    let mut rhs = DVector::zeros(w + r);
    rhs.rows_mut(0, w).copy_from(&(hy.transpose() * ys * (2.0 * lam)));
    rhs.rows_mut(w, r).copy_from(us);
    kkt.lu().solve(&rhs).unwrap().rows(0, w).into_owned()
}

#[test]
fn closed_form_matches_full_kkt() {
    let b = bank(&[1.0, 1.7], 11);
    for lam in [0.1, 1.0, 10.0] {
        for seed in 0..5u64 {
            let win = SampleWindow::from_trajectory(&record(1.3, 0.02, 30, 70 + seed), 5, N_INI + L).unwrap();
            for e in b.entries() {
                let k = solve_window_coefficients(e, &win, lam).unwrap();
                let k_ref = kkt_oracle(&e.hu.data, &e.hy.data, &stack_rows(&win.u_s), &stack_rows(&win.y_s), lam);
                assert!((&k - &k_ref).norm() <= 1e-8 * k_ref.norm().max(1.0));
                assert!((score_dataset(e, &win, lam).unwrap() - k_ref.norm()).abs() <= 1e-8 * k_ref.norm().max(1.0));
            }
        }
    }
}

#[test]
fn rank_deficient_inputs_are_degenerate() {
    // A constant input never excites the plant.
    let u = DMatrix::from_element(N, 1, 0.5);
    let flat = record_episode(&mut gain_plant(1.0, 0.05), &u, 1).unwrap();
    let b = DatasetBank::new(vec![("flat".into(), flat, None)], N_INI, L, 1).unwrap();
    let win = SampleWindow::from_trajectory(&record(1.0, 0.05, 20, 3), 2, N_INI + L).unwrap();
    assert!(score_dataset(&b.entries()[0], &win, 1.0).is_err());
    assert!(matches!(select_dataset(&b, &win, 1.0), Err(ddmpc::Error::SelectionFailed)));
}
