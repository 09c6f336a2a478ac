//! Leave-one-out missing-landmark error over model order, with the orders
//! picked by each selector marked.

use pdm_order::eval::{lmmse_curve, LmmseOptions, SelectorSuite};
use pdm_order::simgen::{make_seed_pdm_procedural, sample_shapes, SimConfig, Spectrum};

fn main() -> pdm_order::Result<()> {
    let seed = make_seed_pdm_procedural(40, 10, &Spectrum::geometric(0.7), 1)?;
    let set = sample_shapes(&seed, &SimConfig::new(100, 10.0, 3))?;

    let opts = LmmseOptions {
        selectors: Some(SelectorSuite::default()),
        ..LmmseOptions::default()
    };
    let result = lmmse_curve(&set, &opts)?;
    for (t, e) in result.errors.iter().take(20) {
        println!("t={t:>2}  e={e:.4e}");
    }
    println!("... t_max={}", result.errors.keys().last().unwrap());
    println!("{}", result.selected_json());
    Ok(())
}
