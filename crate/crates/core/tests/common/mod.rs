#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-scale..scale))
}

/// Random SPD matrix with eigenvalues bounded below by `floor`.
pub fn random_spd(n: usize, floor: f64, seed: u64) -> DMatrix<f64> {
    let m = uniform_matrix(n, n, 1.0, seed);
    &m * m.transpose() + DMatrix::identity(n, n) * floor
}

/// Exact minimiser of `1/2 x'Px + q'x` over the box `[lo, hi]` by trying
/// every assignment of each coordinate to {free, lower, upper}.
pub fn box_qp_enumerate(p: &DMatrix<f64>, q: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = q.len();
    let mut best: Option<(DVector<f64>, f64)> = None;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut x = DVector::zeros(n);
        let mut free = Vec::new();
        for i in 0..n {
            match c % 3 {
                0 => free.push(i),
                1 => x[i] = lo[i],
                _ => x[i] = hi[i],
            }
            c /= 3;
        }
        if !free.is_empty() {
            let k = free.len();
            let pff = DMatrix::from_fn(k, k, |a, b| p[(free[a], free[b])]);
            let fixed: DVector<f64> = p * &x;
            let rhs = DVector::from_fn(k, |a, _| -(q[free[a]] + fixed[free[a]]));
            let Some(sol) = pff.cholesky().map(|ch| ch.solve(&rhs)) else {
                continue;
            };
            let mut feasible = true;
            for (a, &i) in free.iter().enumerate() {
                if sol[a] < lo[i] - 1e-12 || sol[a] > hi[i] + 1e-12 {
                    feasible = false;
                }
                x[i] = sol[a];
            }
            if !feasible {
                continue;
            }
        }
        let f = 0.5 * x.dot(&(p * &x)) + q.dot(&x);
        if best.as_ref().is_none_or(|(_, b)| f < *b) {
            best = Some((x, f));
        }
    }
    best.expect("the all-bound corner is always feasible")
}
