use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gaussian_noise, Plant};
use crate::error::{Error, Result};

const DIVERGENCE_LIMIT: f64 = 1e9;

/// Discrete LTI plant `x+ = A x + B u`, `y = C x + D u + noise`.
#[derive(Debug, Clone)]
pub struct LtiPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub x: DVector<f64>,
    pub noise_std: f64,
    pub dt: f64,
}

impl LtiPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        dt: f64,
    ) -> Result<Self> {
        let h = a.nrows();
        if a.ncols() != h || b.nrows() != h || c.ncols() != h || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "inconsistent state-space shapes A{:?} B{:?} C{:?} D{:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        if [&a, &b, &c, &d].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("state-space matrices"));
        }
        Ok(Self {
            x: DVector::zeros(h),
            a,
            b,
            c,
            d,
            noise_std: 0.0,
            dt,
        })
    }

    /// Single-state, single-input, single-output plant.
    pub fn scalar(a: f64, b: f64, c: f64, d: f64, dt: f64) -> Self {
        let one = |v| DMatrix::from_element(1, 1, v);
        Self::new(one(a), one(b), one(c), one(d), dt).expect("scalar shapes are consistent")
    }

    /// Random strictly proper plant with spectral radius `radius` (< 1 for a
    /// stable plant). Generic draws are controllable and observable.
    pub fn random_stable(h: usize, m: usize, c: usize, radius: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, k| DMatrix::from_fn(r, k, |_, _| rng.random_range(-1.0..1.0));
        let mut a = draw(h, h);
        let rho = a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0_f64, f64::max);
        if rho > 0.0 {
            a *= radius / rho;
        }
        let b = draw(h, m);
        let cm = draw(c, h);
        Self::new(a, b, cm, DMatrix::zeros(c, m), 1.0).expect("random shapes are consistent")
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.noise_std = std;
        self
    }

    pub fn with_state(mut self, x: DVector<f64>) -> Self {
        self.x = x;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Returns `y_t = C x_t + D u_t + noise` and advances to `x_{t+1}`.
    pub fn lti_step(&mut self, u: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        if u.len() != self.b.ncols() {
            return Err(Error::Dimension(format!(
                "expected {} inputs, got {}",
                self.b.ncols(),
                u.len()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plant input"));
        }
        let y = &self.c * &self.x + &self.d * u + gaussian_noise(self.c.nrows(), self.noise_std, rng);
        self.x = &self.a * &self.x + &self.b * u;
        let norm = self.x.norm();
        if !(norm <= DIVERGENCE_LIMIT) {
            return Err(Error::Divergence {
                norm,
                limit: DIVERGENCE_LIMIT,
            });
        }
        Ok(y)
    }

    /// Noise-free rollout from state `x0`, returning the `T x c` outputs.
    pub fn rollout(&self, x0: &DVector<f64>, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = x0.clone();
        let mut out = DMatrix::zeros(inputs.nrows(), self.c.nrows());
        for t in 0..inputs.nrows() {
            let u = inputs.row(t).transpose();
            let y = &self.c * &x + &self.d * &u;
            out.row_mut(t).copy_from(&y.transpose());
            x = &self.a * &x + &self.b * &u;
        }
        out
    }
}

impl Plant for LtiPlant {
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn label(&self) -> String {
        format!("lti-h{}", self.state_dim())
    }

    fn step(&mut self, u: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        self.lti_step(u, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn scalar_hand_recursion() {
        let mut p = LtiPlant::scalar(0.5, 1.0, 1.0, 0.0, 1.0);
        let one = DVector::from_element(1, 1.0);
        let y0 = p.lti_step(&one, &mut rng()).unwrap();
        assert_eq!(y0[0], 0.0);
        assert_eq!(p.x[0], 1.0);
        let y1 = p.lti_step(&DVector::zeros(1), &mut rng()).unwrap();
        assert_eq!(y1[0], 1.0);
    }

    #[test]
    fn rest_stays_at_rest() {
        let mut p = LtiPlant::random_stable(3, 2, 2, 0.9, 1);
        for _ in 0..50 {
            let y = p.lti_step(&DVector::zeros(2), &mut rng()).unwrap();
            assert!(y.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn superposition() {
        let p = LtiPlant::random_stable(4, 2, 3, 0.95, 7);
        let u1 = DMatrix::from_fn(30, 2, |i, j| ((i + 2 * j) as f64).sin());
        let u2 = DMatrix::from_fn(30, 2, |i, j| ((3 * i + j) as f64).cos());
        let x0 = DVector::zeros(4);
        let lhs = p.rollout(&x0, &(&u1 + &u2));
        let rhs = p.rollout(&x0, &u1) + p.rollout(&x0, &u2);
        assert!((lhs - rhs).abs().max() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let mut p = LtiPlant::scalar(2.0, 1.0, 1.0, 0.0, 1.0);
        let u = DVector::from_element(1, 1.0);
        let mut r = rng();
        let err = (0..100).find_map(|_| p.lti_step(&u, &mut r).err());
        assert!(matches!(err, Some(Error::Divergence { .. })));
    }

    #[test]
    fn random_plant_has_requested_radius() {
        let p = LtiPlant::random_stable(5, 1, 1, 0.8, 3);
        let rho = p
            .a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0_f64, f64::max);
        assert!((rho - 0.8).abs() < 1e-9);
    }
}
