//! Draws noisy shapes from a procedural generating model and writes them as
//! landmark rows, one shape per line.

use pdm_order::simgen::{
    make_seed_pdm_procedural, noise_variance, sample_shapes, SimConfig, SimulationTruth, Spectrum,
};

fn main() -> pdm_order::Result<()> {
    let seed = make_seed_pdm_procedural(40, 10, &Spectrum::geometric(0.7), 1)?;
    let cfg = SimConfig::new(5, 10.0, 7);
    let set = sample_shapes(&seed, &cfg)?;

    println!("smallest lambda = {:.4e}", seed.smallest_lambda());
    println!("noise variance  = {:.4e}", noise_variance(&seed, cfg.beta_db, cfg.coefficients));
    let truth = SimulationTruth::new(&seed, &cfg);
    println!("{}", serde_json::to_string(&truth).expect("serializable"));

    let mut out = std::io::stdout().lock();
    set.write_csv(&mut out).expect("stdout");
    Ok(())
}
