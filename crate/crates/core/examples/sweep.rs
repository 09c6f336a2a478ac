//! Order selection on growing subsets of one data set, the way one would
//! study a real collection without ground truth.

use pdm_order::eval::{order_sweep, SweepOptions};
use pdm_order::simgen::{make_seed_pdm_procedural, sample_shapes, SimConfig, Spectrum};

fn main() -> pdm_order::Result<()> {
    // stand-in for an ingested collection; swap in `load_shape_set` for real data
    let seed = make_seed_pdm_procedural(30, 8, &Spectrum::geometric(0.75), 5)?;
    let set = sample_shapes(&seed, &SimConfig::new(160, 15.0, 9))?;

    let summary = order_sweep(&set, &[20, 40, 80, 160], 5, 17, &SweepOptions::default())?;
    print!("{}", summary.to_csv());
    Ok(())
}
