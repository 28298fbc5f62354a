//! Oracles shared by the integration tests.
#![allow(dead_code)]

use incdiss::linalg::spectral_radius;
use incdiss::DifferentialMatrices;
use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Largest singular value of `C (zI - A)^-1 B + D` over a dense sweep of
/// the upper unit half-circle.
pub fn hinf_sweep(m: &DifferentialMatrices, n_freq: usize) -> f64 {
    let n = m.n_x();
    let cplx = |a: &DMatrix<f64>| a.map(|v| Complex::new(v, 0.0));
    let (a, b, c, d) = (cplx(&m.a), cplx(&m.b), cplx(&m.c), cplx(&m.d));
    (0..=n_freq)
        .map(|k| {
            let w = std::f64::consts::PI * k as f64 / n_freq as f64;
            let z = Complex::new(w.cos(), w.sin());
            let res = (DMatrix::<Complex<f64>>::identity(n, n) * z - &a)
                .try_inverse()
                .expect("no poles on the unit circle");
            (&c * res * &b + &d).singular_values().max()
        })
        .fold(0.0, f64::max)
}

/// Random system with spectral radius drawn from `[0.3, 0.9]`.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize, nw: usize, nz: usize) -> DifferentialMatrices {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let a = &a * (rng.gen_range(0.3..0.9) / spectral_radius(&a));
    DifferentialMatrices::new(
        a,
        DMatrix::from_fn(n, nw, |_, _| rng.gen_range(-1.0..1.0)),
        DMatrix::from_fn(nz, n, |_, _| rng.gen_range(-1.0..1.0)),
        DMatrix::from_fn(nz, nw, |_, _| rng.gen_range(-0.5..0.5)),
    )
    .unwrap()
}

/// `x(k+1) = 0.5 x + w`, `z = x`: H-infinity norm 2 at `z = 1`.
pub fn scalar_oracle() -> DifferentialMatrices {
    DifferentialMatrices::scalar(0.5, 1.0, 1.0, 0.0)
}
