//! Small Monte Carlo study: mean selected order against the number of
//! training shapes at 5 dB.

use pdm_order::eval::{monte_carlo_order, McConfig};
use pdm_order::simgen::{make_seed_pdm_procedural, Spectrum};

fn main() -> pdm_order::Result<()> {
    let seed = make_seed_pdm_procedural(40, 10, &Spectrum::geometric(0.7), 1)?;
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let cfg = McConfig::new(seed, 5.0, vec![10, 20, 40, 100], trials, 2024);

    let summary = monte_carlo_order(&cfg)?;
    print!("{}", summary.to_csv());
    eprintln!("{} failed trials", summary.failures);
    Ok(())
}
