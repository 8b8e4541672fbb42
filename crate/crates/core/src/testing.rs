//! Seeded random operators and triples for tests and verification reports.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::operator::{HilbertSpace, Operator};
use crate::slh::SlhTriple;

pub struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn index(&mut self, upper: usize) -> usize {
        self.0.random_range(0..upper)
    }

    fn complex_normal(&mut self) -> Complex64 {
        Complex64::new(self.normal(), self.normal()) * std::f64::consts::FRAC_1_SQRT_2
    }
}

pub fn random_matrix(rng: &mut TestRng, d: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(d, d, |_, _| rng.complex_normal())
}

/// Entries ~ CN(0, 1/d) so norms stay O(1) across dimensions.
pub fn random_operator(rng: &mut TestRng, d: usize) -> Operator {
    let scale = 1.0 / (d as f64).sqrt();
    Operator::from_square(random_matrix(rng, d) * Complex64::new(scale, 0.0)).expect("square")
}

pub fn random_hermitian(rng: &mut TestRng, d: usize) -> Operator {
    let x = random_operator(rng, d);
    (&x + x.adjoint()) * 0.5
}

/// Haar-ish unitary from the QR factor of a Gaussian matrix.
pub fn random_unitary(rng: &mut TestRng, d: usize) -> DMatrix<Complex64> {
    let qr = random_matrix(rng, d).qr();
    let q = qr.q();
    let r = qr.r();
    let phases = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            let z = r[(i, i)];
            if z.norm() > 0.0 {
                z / z.norm()
            } else {
                Complex64::new(1.0, 0.0)
            }
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    q * phases
}

/// Random validated triple on a `d`-dimensional system with `n` channels.
pub fn random_triple(rng: &mut TestRng, d: usize, n: usize) -> SlhTriple {
    let u = random_unitary(rng, n * d);
    let space = HilbertSpace::simple(d).expect("dimension");
    let s = (0..n)
        .map(|j| {
            (0..n)
                .map(|k| {
                    let block = u.view((j * d, k * d), (d, d)).into_owned();
                    Operator::from_matrix(space.clone(), block).expect("block")
                })
                .collect()
        })
        .collect();
    let l = (0..n).map(|_| random_operator(rng, d)).collect();
    SlhTriple::new(s, l, random_hermitian(rng, d)).expect("shapes")
}
