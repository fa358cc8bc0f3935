//! Monte Carlo benchmark harness: draws users, runs the configured engines
//! against shared channel realizations, and aggregates success rate,
//! achievable rate, and pilot overhead per sweep point.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::{make_channel, ArrayConfig, ChannelRealization, MeasurementOracle, UserLocation};
use crate::codebook::{angular_codebook, Codeword, PolarCodebook};
use crate::engines::{
    optimal_polar_index, run_exhaustive, run_far_exhaustive, run_far_hierarchical,
    run_perfect_csi, run_two_phase, run_two_stage, EngineKind, EngineParams, SearchCodebooks,
    TrainingResult,
};
use crate::error::{Error, Result};

/// Everything a benchmark run needs besides the sweep definition.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub array: ArrayConfig,
    /// Ring count of the polar grid, counting the planar ring.
    pub rings: usize,
    pub s_delta: f64,
    /// Pilot transmit power in watts.
    pub pilot_power: f64,
    /// Receiver noise power in watts; zero makes every measurement exact.
    pub noise_power: f64,
    /// Reference path gain at one meter.
    pub rho0: f64,
    pub engines: Vec<EngineKind>,
    pub params: EngineParams,
    pub trials: u64,
    pub seed: u64,
    /// Nominal user distance in meters; sweeps override it point by point.
    pub user_r: f64,
    /// Pin the user angle instead of drawing it uniformly from [-1, 1].
    pub fixed_theta: Option<f64>,
    /// Run trials across threads. Aggregation is trial-ordered either way,
    /// so results are byte-identical to the sequential path.
    pub parallel: bool,
}

impl ScenarioConfig {
    /// The benchmark configuration every default and test is anchored to:
    /// 512 antennas at 100 GHz, 6 rings, 30 dBm pilots over a -72 dB
    /// reference path into -80 dBm noise.
    pub fn reference() -> Result<Self> {
        let array = ArrayConfig::new(512, 0.003)?;
        let params = EngineParams::defaults(&array);
        Ok(ScenarioConfig {
            array,
            rings: 6,
            s_delta: 68.27,
            pilot_power: 1.0,
            noise_power: 1e-11,
            rho0: 10f64.powf(-7.2),
            engines: EngineKind::ALL_SWEEP.to_vec(),
            params,
            trials: 2000,
            seed: 1,
            user_r: 40.0,
            fixed_theta: None,
            parallel: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.engines.is_empty() {
            return Err(Error::NoEngines);
        }
        if self.trials < 1 {
            return Err(Error::InvalidParam {
                name: "trials",
                why: "at least one trial required".into(),
            });
        }
        for (name, value) in [
            ("pilot_power", self.pilot_power),
            ("rho0", self.rho0),
            ("s_delta", self.s_delta),
            ("user_r", self.user_r),
        ] {
            if value <= 0.0 {
                return Err(Error::NonPositive { name, value });
            }
        }
        if self.noise_power < 0.0 {
            return Err(Error::NonPositive {
                name: "noise_power",
                value: self.noise_power,
            });
        }
        if let Some(theta) = self.fixed_theta {
            if !(-1.0..=1.0).contains(&theta) {
                return Err(Error::AngleOutOfRange(theta));
            }
        }
        self.params.validate(&self.array)
    }
}

/// Which scenario knob a benchmark varies, and over what grid.
#[derive(Debug, Clone)]
pub enum Sweep {
    /// User distance in meters.
    Distance { grid: Vec<f64> },
    /// Reference SNR in dB at a fixed distance; noise power is scaled to hit
    /// each target.
    Snr { gamma_db: Vec<f64>, r: f64 },
    /// Array size; distance tracks the near-field inner edge and the ring
    /// scale keeps the outermost ring at the same fraction of the
    /// aperture-dependent field boundary.
    Antennas { grid: Vec<usize> },
}

impl Sweep {
    pub fn default_distance() -> Sweep {
        Sweep::Distance {
            grid: vec![10.0, 20.0, 40.0, 80.0],
        }
    }

    pub fn default_snr() -> Sweep {
        Sweep::Snr {
            gamma_db: (0..=10).map(|k| 5.0 * k as f64).collect(),
            r: 40.0,
        }
    }

    pub fn default_antennas() -> Sweep {
        Sweep::Antennas {
            grid: vec![64, 128, 256, 512],
        }
    }

    pub fn var_name(&self) -> &'static str {
        match self {
            Sweep::Distance { .. } => "distance_m",
            Sweep::Snr { .. } => "gamma_db",
            Sweep::Antennas { .. } => "antennas",
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            Sweep::Distance { grid } => grid.clone(),
            Sweep::Snr { gamma_db, .. } => gamma_db.clone(),
            Sweep::Antennas { grid } => grid.iter().map(|&n| n as f64).collect(),
        }
    }
}

/// Reference SNR `p * n * rho0 / (r^2 * sigma^2)`: what a perfectly matched
/// unit-gain beam would deliver.
pub fn reference_snr(pilot_power: f64, n: usize, rho0: f64, r: f64, noise_power: f64) -> f64 {
    if noise_power == 0.0 {
        return f64::INFINITY;
    }
    pilot_power * n as f64 * rho0 / (r * r * noise_power)
}

/// Spectral efficiency `log2(1 + snr * gain^2)` of serving this channel with
/// the chosen beam.
pub fn achievable_rate(
    channel: &ChannelRealization,
    chosen: &Codeword,
    pilot_power: f64,
    noise_power: f64,
) -> f64 {
    let gamma = reference_snr(
        pilot_power,
        channel.h_vec.len(),
        channel.rho0,
        channel.user.r,
        noise_power,
    );
    let g = channel.normalized_gain(&chosen.weights, chosen.active_range());
    (1.0 + gamma * g * g).log2()
}

/// Whether training landed exactly on the noiseless-optimal polar cell.
pub fn success_indicator(
    result: &TrainingResult,
    truth: (usize, usize),
    book: &PolarCodebook,
) -> Result<bool> {
    for (n, s) in [truth, result.polar_index] {
        if n < 1 || n > book.cfg.n || s >= book.rings {
            return Err(Error::GridMismatch {
                n,
                s,
                n_max: book.cfg.n,
                s_max: book.rings,
            });
        }
    }
    Ok(result.polar_index == truth)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-(point, trial, lane) stream seed. Lane 0 draws the
/// user; engine lanes come from [`EngineKind::lane`]. The layout is part of
/// the output contract: reruns and engine-subset runs replay identical
/// channels and noise.
pub fn sub_seed(seed: u64, point: u64, trial: u64, lane: u64) -> u64 {
    let mut h = splitmix64(seed ^ 0x243F_6A88_85A3_08D3);
    for p in [point, trial, lane] {
        h = splitmix64(h ^ p.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    h
}

/// The user a given trial of a given sweep point sees.
pub fn trial_user(
    seed: u64,
    point: u64,
    trial: u64,
    fixed_theta: Option<f64>,
    r: f64,
) -> UserLocation {
    let theta = match fixed_theta {
        Some(theta) => theta,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, point, trial, 0));
            rng.gen::<f64>() * 2.0 - 1.0
        }
    };
    UserLocation::new(theta, r).expect("validated scenario keeps users in range")
}

/// One aggregated row of a benchmark: one engine at one sweep point.
#[derive(Debug, Clone)]
pub struct ResultRecord {
    pub engine: EngineKind,
    pub sweep_var: &'static str,
    pub sweep_value: f64,
    pub trials: u64,
    pub success_rate: f64,
    pub mean_rate_bps_hz: f64,
    pub mean_pilots: f64,
    pub seed: u64,
    /// Cumulative engine runtime across trials. Informational; not part of
    /// the CSV so outputs stay byte-reproducible.
    pub wall_time_s: f64,
}

pub fn write_records_csv<W: Write>(records: &[ResultRecord], mut w: W) -> Result<()> {
    writeln!(
        w,
        "engine,sweep_var,sweep_value,trials,success_rate,mean_rate_bps_hz,mean_pilots,seed"
    )?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.engine.id(),
            r.sweep_var,
            r.sweep_value,
            r.trials,
            r.success_rate,
            r.mean_rate_bps_hz,
            r.mean_pilots,
            r.seed
        )?;
    }
    Ok(())
}

struct PointSetup {
    array: ArrayConfig,
    noise_power: f64,
    r: f64,
    params: EngineParams,
    book: PolarCodebook,
    angular: Vec<Codeword>,
    search: SearchCodebooks,
}

fn setup_point(scenario: &ScenarioConfig, sweep: &Sweep, value: f64) -> Result<PointSetup> {
    let (array, noise_power, r, s_delta, params) = match sweep {
        Sweep::Distance { .. } => (
            scenario.array,
            scenario.noise_power,
            value,
            scenario.s_delta,
            scenario.params,
        ),
        Sweep::Snr { r, .. } => {
            let gamma = 10f64.powf(value / 10.0);
            let noise = scenario.pilot_power * scenario.array.n as f64 * scenario.rho0
                / (r * r * gamma);
            (scenario.array, noise, *r, scenario.s_delta, scenario.params)
        }
        Sweep::Antennas { .. } => {
            let n = value as usize;
            let array = ArrayConfig::new(n, scenario.array.lambda_c)?;
            let s_delta = (n * n) as f64 * array.lambda_c / (8.0 * 1.44);
            let params = EngineParams {
                stage1_layers: EngineParams::defaults(&array).stage1_layers,
                ..scenario.params
            };
            (array, scenario.noise_power, array.r_min, s_delta, params)
        }
    };
    if r <= 0.0 {
        return Err(Error::NonPositive {
            name: "sweep distance",
            value: r,
        });
    }
    params.validate(&array)?;
    let book = PolarCodebook::new(array, scenario.rings, s_delta)?;
    let angular = angular_codebook(&array);
    let search = SearchCodebooks::new(array, scenario.rings, s_delta, params.stage1_layers)?;
    Ok(PointSetup {
        array,
        noise_power,
        r,
        params,
        book,
        angular,
        search,
    })
}

struct EngineOutcome {
    success: bool,
    rate: f64,
    pilots: u64,
    secs: f64,
}

fn run_trial(scenario: &ScenarioConfig, setup: &PointSetup, point: u64, trial: u64) -> Vec<EngineOutcome> {
    let user = trial_user(scenario.seed, point, trial, scenario.fixed_theta, setup.r);
    let channel =
        make_channel(user, scenario.rho0, &setup.array).expect("validated scenario builds channels");
    let truth = optimal_polar_index(&channel, &setup.book);
    scenario
        .engines
        .iter()
        .map(|&engine| {
            let t0 = Instant::now();
            let result = if engine == EngineKind::PerfectCsi {
                run_perfect_csi(&channel, &setup.book)
            } else {
                let mut oracle = MeasurementOracle::new(
                    channel.clone(),
                    scenario.pilot_power,
                    setup.noise_power,
                    sub_seed(scenario.seed, point, trial, engine.lane()),
                )
                .expect("validated scenario builds oracles");
                match engine {
                    EngineKind::Exhaustive => run_exhaustive(&mut oracle, &setup.book),
                    EngineKind::TwoPhase => {
                        run_two_phase(&mut oracle, &setup.book, &setup.angular, &setup.params)
                    }
                    EngineKind::TwoStage => run_two_stage(&mut oracle, &setup.search, &setup.params),
                    EngineKind::FarHierarchical => {
                        run_far_hierarchical(&mut oracle, &setup.search)
                    }
                    EngineKind::FarExhaustive => {
                        run_far_exhaustive(&mut oracle, &setup.angular, setup.array.levels())
                    }
                    EngineKind::PerfectCsi => unreachable!(),
                }
            };
            let rate = achievable_rate(
                &channel,
                &result.chosen,
                scenario.pilot_power,
                setup.noise_power,
            );
            EngineOutcome {
                success: result.polar_index == truth,
                rate,
                pilots: result.pilots,
                secs: t0.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn map_trials<T, F>(trials: u64, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if parallel {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(f).collect()
    } else {
        (0..trials).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn map_trials<T, F>(trials: u64, _parallel: bool, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..trials).map(f).collect()
}

/// Run the configured engines over every sweep point. Returns one record per
/// (point, engine), in sweep order then engine order.
pub fn run_sweep(scenario: &ScenarioConfig, sweep: &Sweep) -> Result<Vec<ResultRecord>> {
    scenario.validate()?;
    let values = sweep.values();
    let mut records = Vec::with_capacity(values.len() * scenario.engines.len());
    for (point, &value) in values.iter().enumerate() {
        let setup = setup_point(scenario, sweep, value)?;
        let per_trial = map_trials(scenario.trials, scenario.parallel, |t| {
            run_trial(scenario, &setup, point as u64, t)
        });
        for (e_idx, &engine) in scenario.engines.iter().enumerate() {
            let mut successes = 0u64;
            let mut rate_sum = 0.0;
            let mut pilot_sum = 0u64;
            let mut secs = 0.0;
            for outcomes in &per_trial {
                let o = &outcomes[e_idx];
                successes += o.success as u64;
                rate_sum += o.rate;
                pilot_sum += o.pilots;
                secs += o.secs;
            }
            let trials = scenario.trials as f64;
            records.push(ResultRecord {
                engine,
                sweep_var: sweep.var_name(),
                sweep_value: value,
                trials: scenario.trials,
                success_rate: successes as f64 / trials,
                mean_rate_bps_hz: rate_sum / trials,
                mean_pilots: pilot_sum as f64 / trials,
                seed: scenario.seed,
                wall_time_s: secs,
            });
        }
    }
    Ok(records)
}
