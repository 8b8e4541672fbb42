//! Statistical helpers for the acceptance suite in `tests/acceptance.rs`.

use num_complex::Complex64;

/// Added to 3σ_MC where the ensemble spread vanishes identically.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// `|mean − target| ≤ 3σ + SIGMA_FLOOR`.
pub fn within(mean: f64, sigma: f64, target: f64) -> bool {
    (mean - target).abs() <= 3.0 * sigma + SIGMA_FLOOR
}

/// Welford mean and variance of fixed-length samples.
#[derive(Clone, Debug, Default)]
pub struct Running {
    n: f64,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Running {
    pub fn push(&mut self, xs: &[f64]) {
        if self.mean.is_empty() {
            self.mean = vec![0.0; xs.len()];
            self.m2 = vec![0.0; xs.len()];
        }
        self.n += 1.0;
        for ((m, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(xs) {
            let delta = x - *m;
            *m += delta / self.n;
            *m2 += delta * (x - *m);
        }
    }

    /// Standard error of the mean of component `i`.
    pub fn sigma(&self, i: usize) -> f64 {
        (self.m2[i] / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Least squares `y ≈ c1 x1 + c2 x2` over complex samples.
pub fn fit2(y: &[Complex64], x1: &[Complex64], x2: &[Complex64]) -> (Complex64, Complex64) {
    let dot = |u: &[Complex64], v: &[Complex64]| u.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<Complex64>();
    let (g11, g12, g22) = (dot(x1, x1), dot(x1, x2), dot(x2, x2));
    let (b1, b2) = (dot(x1, y), dot(x2, y));
    let det = g11 * g22 - g12 * g12.conj();
    ((b1 * g22 - g12 * b2) / det, (g11 * b2 - g12.conj() * b1) / det)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 0.5];
        let mut r = Running::default();
        for x in xs {
            r.push(&[x, 2.0 * x]);
        }
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((r.mean[0] - mean).abs() < 1e-15);
        assert!((r.sigma(0) - (var / 5.0).sqrt()).abs() < 1e-15);
        assert!((r.sigma(1) - 2.0 * r.sigma(0)).abs() < 1e-15);
    }

    #[test]
    fn fit_recovers_exact_coefficients() {
        let c1 = Complex64::new(-0.5, 0.25);
        let c2 = Complex64::new(0.0, -1.0);
        let x1: Vec<Complex64> = (0..20).map(|k| Complex64::new(k as f64, (k * k) as f64 * 0.1)).collect();
        let x2: Vec<Complex64> = (0..20).map(|k| Complex64::new((k as f64).sin(), 0.0)).collect();
        let y: Vec<Complex64> = x1.iter().zip(&x2).map(|(a, b)| c1 * a + c2 * b).collect();
        let (f1, f2) = fit2(&y, &x1, &x2);
        assert!((f1 - c1).norm() < 1e-12 && (f2 - c2).norm() < 1e-12);
    }

    #[test]
    fn floor_admits_zero_spread() {
        assert!(within(1.0, 0.0, 1.0 + 1e-13));
        assert!(!within(1.0, 0.0, 1.0 + 1e-9));
        assert!(within(0.0, 1.0, 2.9));
    }
}
