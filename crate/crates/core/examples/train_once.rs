//! Train one near-field user with the hierarchical engine and compare the
//! pick against the noiseless exhaustive optimum.

use nearbeam::array::{make_channel, ArrayConfig, MeasurementOracle, UserLocation};
use nearbeam::codebook::PolarCodebook;
use nearbeam::engines::{optimal_polar_index, run_two_stage, EngineParams, SearchCodebooks};

fn main() -> nearbeam::Result<()> {
    let cfg = ArrayConfig::new(512, 0.003)?;
    let user = UserLocation::new(0.25, 20.0)?;
    let channel = make_channel(user, 10f64.powf(-7.2), &cfg)?;

    let params = EngineParams::defaults(&cfg);
    let books = SearchCodebooks::new(cfg, 6, 68.27, params.stage1_layers)?;
    let mut oracle = MeasurementOracle::new(channel.clone(), 1.0, 1e-11, 7)?;
    let result = run_two_stage(&mut oracle, &books, &params);

    let grid = PolarCodebook::new(cfg, 6, 68.27)?;
    let truth = optimal_polar_index(&channel, &grid);
    println!(
        "picked cell {:?}: theta {:.6}, {} m, {} pilots (noiseless optimum {:?})",
        result.polar_index, result.theta_hat, result.r_hat, result.pilots, truth
    );
    Ok(())
}
