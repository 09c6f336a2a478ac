//! Compares the split-half likelihood criterion with the 95% variance rule on
//! synthetic shapes whose true order is 10.

use pdm_order::order_select::{select_order_proposed, select_order_variance, SelectOptions};
use pdm_order::pdm::fit_pdm;
use pdm_order::simgen::{make_seed_pdm_procedural, sample_shapes, SimConfig, Spectrum};

fn main() -> pdm_order::Result<()> {
    let seed = make_seed_pdm_procedural(40, 10, &Spectrum::geometric(0.7), 1)?;
    let set = sample_shapes(&seed, &SimConfig::new(200, 20.0, 42))?;

    let result = select_order_proposed(&set, &SelectOptions::default())?;
    for (t, score) in result.scores.iter().take(14) {
        let mark = if *t == result.t_star { "  <- t*" } else { "" };
        println!("t={t:>2}  score={score:.6e}{mark}");
    }
    let variance_t = select_order_variance(&fit_pdm(&set)?, 0.95)?;
    println!("proposed t*={}  variance-rule t={variance_t}  true t=10", result.t_star);
    Ok(())
}
