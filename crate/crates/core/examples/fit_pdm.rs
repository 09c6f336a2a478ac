//! Fits a point distribution model to simulated shapes and prints the
//! eigenvalue spectrum with its cumulative variance.

use pdm_order::order_select::cumulative_variance;
use pdm_order::pdm::fit_pdm;
use pdm_order::simgen::{make_seed_pdm_procedural, sample_shapes, SimConfig, Spectrum};

fn main() -> pdm_order::Result<()> {
    let seed = make_seed_pdm_procedural(20, 5, &Spectrum::geometric(0.6), 11)?;
    let set = sample_shapes(&seed, &SimConfig::new(150, 25.0, 3))?;

    let model = fit_pdm(&set)?;
    let cumulative = cumulative_variance(&model)?;
    println!("dim={} rank={} total_variance={:.4e}", model.dim(), model.positive_rank(), model.total_variance());
    for (i, (lambda, c)) in model.eigvals.iter().zip(&cumulative).take(8).enumerate() {
        println!("mode {:>2}  lambda={lambda:.4e}  cumulative={c:.4}", i + 1);
    }

    let truncated = model.truncate(5)?;
    println!("\n{}", truncated.to_text().lines().take(3).collect::<Vec<_>>().join("\n"));
    Ok(())
}
