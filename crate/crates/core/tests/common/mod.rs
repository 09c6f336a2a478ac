#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pdm_order::pdm::TruncatedPdm;
use pdm_order::shapes::{Shape, Similarity};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// `n x t` with orthonormal columns (QR of a random matrix).
pub fn random_orthonormal(rng: &mut impl Rng, n: usize, t: usize) -> DMatrix<f64> {
    let q = random_matrix(rng, n, t).qr().q();
    q.columns(0, t).into_owned()
}

/// Random truncated model with descending eigenvalues.
pub fn random_model(rng: &mut impl Rng, n: usize, t: usize) -> TruncatedPdm {
    let basis = random_orthonormal(rng, n, t);
    let mut lambdas: Vec<f64> = (0..t).map(|_| rng.gen_range(0.1..4.0)).collect();
    lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    TruncatedPdm::new(DVector::zeros(n), basis, DVector::from_vec(lambdas)).unwrap()
}

pub fn random_shape(rng: &mut impl Rng, landmarks: usize) -> Shape {
    let pts: Vec<(f64, f64)> = (0..landmarks)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    Shape::from_landmarks(&pts).unwrap()
}

pub fn random_similarity(rng: &mut impl Rng) -> Similarity {
    Similarity {
        scale: rng.gen_range(0.3..3.0),
        rotation: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        translation: (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
    }
}

/// Objective of the alternating fit written out longhand.
pub fn objective_longhand(e: &DMatrix<f64>, sigma: &[f64]) -> f64 {
    let m2 = e.ncols() as f64;
    let mut total = 0.0;
    for i in 0..e.nrows() {
        total += m2 * sigma[i].ln();
        for m in 0..e.ncols() {
            total += e[(i, m)] * e[(i, m)] / sigma[i];
        }
    }
    total
}
