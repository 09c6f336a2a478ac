mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use pdm_order::pdm::{clamp_to_box_with, fit_pdm, project_constrained_with, ClampMode, PdmModel};
use pdm_order::shapes::{align_pair, generalized_procrustes, Shape, ShapeSet};
use proptest::prelude::*;
use rand::Rng;

fn transformed_copies(seed: u64, landmarks: usize, copies: usize) -> (Shape, ShapeSet) {
    let mut r = rng(seed);
    let base = random_shape(&mut r, landmarks);
    let shapes = (0..copies).map(|_| base.transformed(&random_similarity(&mut r))).collect();
    (base, ShapeSet::new(shapes).unwrap())
}

fn noisy_set(seed: u64, landmarks: usize, m: usize) -> ShapeSet {
    let mut r = rng(seed);
    let base = random_shape(&mut r, landmarks);
    let shapes = (0..m)
        .map(|_| {
            let pts: Vec<(f64, f64)> = base
                .landmarks()
                .map(|(x, y)| (x + r.gen_range(-0.1..0.1), y + r.gen_range(-0.1..0.1)))
                .collect();
            Shape::from_landmarks(&pts).unwrap().transformed(&random_similarity(&mut r))
        })
        .collect();
    ShapeSet::new(shapes).unwrap()
}

fn check_model(model: &PdmModel, data: &DMatrix<f64>) -> Result<(), TestCaseError> {
    let n = model.dim();
    let v = &model.eigvecs;
    let gram = v.transpose() * v - DMatrix::identity(n, n);
    prop_assert!(gram.amax() < 1e-10, "orthonormality {}", gram.amax());

    let m = data.ncols() as f64;
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &model.mean;
    }
    let cov = &centered * centered.transpose() / m;
    let rebuilt = v * DMatrix::from_diagonal(&model.eigvals) * v.transpose();
    prop_assert!((&rebuilt - &cov).amax() < 1e-8 * cov.amax().max(1e-300));
    prop_assert!((model.eigvals.sum() - cov.trace()).abs() < 1e-10 * cov.trace().max(1e-300));
    for w in model.eigvals.as_slice().windows(2) {
        prop_assert!(w[0] >= w[1]);
    }
    for col in v.column_iter() {
        let k = col.iamax();
        prop_assert!(col[k] > 0.0);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gpa_collapses_similarity_copies(seed in any::<u64>(), landmarks in 3usize..12, copies in 2usize..9) {
        let (_, set) = transformed_copies(seed, landmarks, copies);
        let aligned = generalized_procrustes(&set, 1e-12, 200).unwrap();
        let first = &aligned.shapes()[0];
        for s in aligned.shapes() {
            prop_assert!(s.rmsd(first) < 1e-8);
        }
    }

    #[test]
    fn gpa_is_a_fixed_point(seed in any::<u64>(), landmarks in 3usize..10, m in 3usize..12) {
        let set = noisy_set(seed, landmarks, m);
        let once = generalized_procrustes(&set, 1e-12, 500).unwrap();
        let twice = generalized_procrustes(&once, 1e-12, 500).unwrap();
        for (a, b) in once.shapes().iter().zip(twice.shapes()) {
            prop_assert!(a.rmsd(b) < 1e-8);
        }
    }

    #[test]
    fn gpa_spectrum_ignores_input_pose(seed in any::<u64>(), landmarks in 3usize..10, m in 4usize..12) {
        let set = noisy_set(seed, landmarks, m);
        let mut r = rng(seed ^ 0x9e37);
        let moved = ShapeSet::new(
            set.shapes().iter().map(|s| s.transformed(&random_similarity(&mut r))).collect(),
        ).unwrap();
        let a = fit_pdm(&generalized_procrustes(&set, 1e-13, 1000).unwrap()).unwrap();
        let b = fit_pdm(&generalized_procrustes(&moved, 1e-13, 1000).unwrap()).unwrap();
        let scale = a.eigvals[0].max(1e-300);
        prop_assert!((&a.eigvals - &b.eigvals).amax() < 1e-8 * scale);
    }

    #[test]
    fn align_pair_is_idempotent(seed in any::<u64>(), landmarks in 3usize..15) {
        let mut r = rng(seed);
        let reference = random_shape(&mut r, landmarks);
        let shape = random_shape(&mut r, landmarks);
        let once = align_pair(&shape, &reference).unwrap();
        let twice = align_pair(&once, &reference).unwrap();
        prop_assert!(once.rmsd(&twice) < 1e-10);
    }

    #[test]
    fn pdm_eigensystem_is_consistent(seed in any::<u64>(), landmarks in 2usize..12, m in 2usize..30) {
        let mut r = rng(seed);
        let data = random_matrix(&mut r, 2 * landmarks, m);
        let set = ShapeSet::from_columns(&data).unwrap().assume_aligned();
        let model = fit_pdm(&set).unwrap();
        check_model(&model, &data)?;
    }

    #[test]
    fn clamp_is_idempotent_and_inside_box(seed in any::<u64>(), t in 1usize..10, spread in 0.1f64..10.0) {
        let mut r = rng(seed);
        let lambdas = DVector::from_fn(t, |_, _| r.gen_range(0.01..5.0));
        let b = DVector::from_fn(t, |_, _| r.gen_range(-spread..spread));
        for mode in [ClampMode::UniformScale, ClampMode::PerCoordinate] {
            let once = clamp_to_box_with(&b, &lambdas, mode);
            for (v, l) in once.iter().zip(lambdas.iter()) {
                prop_assert!(v.abs() <= l.sqrt() * (1.0 + 1e-15));
            }
            let twice = clamp_to_box_with(&once, &lambdas, mode);
            prop_assert_eq!(&once, &twice);
        }
        let uniform = clamp_to_box_with(&b, &lambdas, ClampMode::UniformScale);
        // same direction, never lengthened
        let s = uniform.dot(&b) / b.norm_squared().max(1e-300);
        prop_assert!((&uniform - &b * s).amax() < 1e-12 && s <= 1.0 + 1e-15);
    }

    #[test]
    fn isotropic_weights_do_not_change_projection(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let pdm = random_model(&mut r, 10, 3);
        let y = random_matrix(&mut r, 10, 6) * 2.0;
        let ones = DVector::from_element(10, 1.0);
        for mode in [ClampMode::UniformScale, ClampMode::PerCoordinate] {
            let a = project_constrained_with(&pdm, &y, &ones, mode).unwrap();
            let b = project_constrained_with(&pdm, &y, &(&ones * c), mode).unwrap();
            prop_assert!((a - b).amax() < 1e-10);
        }
    }
}
