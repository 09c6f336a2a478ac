//! Aligns rotated, scaled and shifted copies of a triangle and prints the
//! Procrustes mean.

use pdm_order::shapes::{generalized_procrustes, landmark_table, Shape, ShapeSet, Similarity};
use pdm_order::shapes::{DEFAULT_GPA_MAX_ITER, DEFAULT_GPA_TOL};

fn main() -> pdm_order::Result<()> {
    let base = Shape::from_landmarks(&[(0.0, 0.0), (2.0, 0.0), (0.5, 1.5), (1.5, 1.2)])?;
    let copies = (0..6)
        .map(|k| {
            let k = k as f64;
            base.transformed(&Similarity {
                scale: 1.0 + 0.3 * k,
                rotation: 0.7 * k,
                translation: (k, -2.0 * k),
            })
        })
        .collect();
    let set = ShapeSet::new(copies)?;

    let aligned = generalized_procrustes(&set, DEFAULT_GPA_TOL, DEFAULT_GPA_MAX_ITER)?;
    let report = aligned.alignment_report().expect("GPA output carries a report");
    print!("{}", report.to_key_value());

    let first = &aligned.shapes()[0];
    for (k, s) in aligned.shapes().iter().enumerate() {
        println!("copy {k}: rmsd to copy 0 = {:.2e}", s.rmsd(first));
    }
    print!("{}", landmark_table(&aligned.mean_shape()));
    Ok(())
}
