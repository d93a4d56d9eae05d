//! Seeded random models shared by the integration tests.

#![allow(dead_code)]

use chernflow_core::fiber::{standard_j, standard_omega, LieAlgebraModel, TwoForm};
use chernflow_core::registry::LIE_EXAMPLES;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `I + 0.25 U(-1, 1)`.
pub fn perturbation(r: &mut impl Rng, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| f64::from(u8::from(i == j)) + 0.25 * r.random_range(-1.0..1.0))
}

/// A registry algebra of dimension `dim` with `J = A J_std A^-1` and the
/// matching transported form, so every invariant still holds.
pub fn conjugated_model(r: &mut impl Rng, dim: usize, which: usize) -> LieAlgebraModel<f64> {
    let bases: Vec<_> = LIE_EXAMPLES.iter().filter(|e| e.dim == dim).collect();
    let base = bases[which % bases.len()].model::<f64>().expect("registry model");
    let a = perturbation(r, dim);
    let ainv = a.clone().try_inverse().expect("near-identity matrix is invertible");
    let j = &a * standard_j::<f64>(dim) * &ainv;
    let w = ainv.transpose() * standard_omega::<f64>(dim).matrix() * &ainv;
    let w = (&w - w.transpose()) * 0.5;
    let f = (0..dim * dim * dim)
        .map(|k| *base.structure_constant(k / (dim * dim), (k / dim) % dim, k % dim))
        .collect();
    LieAlgebraModel::new(dim, f, j, TwoForm::from_matrix(w, 1e-12).expect("skew")).expect("shapes")
}

/// Random antisymmetric bracket with a random `J`; Jacobi generally fails.
pub fn random_bracket_model(r: &mut impl Rng, dim: usize) -> LieAlgebraModel<f64> {
    let mut br = Vec::new();
    for g in 0..dim {
        for a in 0..dim {
            for b in a + 1..dim {
                br.push((g, a, b, r.random_range(-1.0..1.0)));
            }
        }
    }
    let base = LieAlgebraModel::<f64>::standard(dim, &br).expect("shapes");
    let a = perturbation(r, dim);
    let ainv = a.clone().try_inverse().expect("invertible");
    let j = &a * standard_j::<f64>(dim) * &ainv;
    let w = ainv.transpose() * standard_omega::<f64>(dim).matrix() * &ainv;
    let w = (&w - w.transpose()) * 0.5;
    let f = (0..dim * dim * dim)
        .map(|k| *base.structure_constant(k / (dim * dim), (k / dim) % dim, k % dim))
        .collect();
    LieAlgebraModel::new(dim, f, j, TwoForm::from_matrix(w, 1e-12).expect("skew")).expect("shapes")
}

pub fn random_vector(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()
}
