use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use nearbeam::array::ArrayConfig;
use nearbeam::codebook::LastLayerRule;
use nearbeam::engines::{EngineKind, EngineParams};
use nearbeam::experiments::{ScenarioConfig, Sweep};

/// On-disk configuration. Every key is optional; missing ones take the
/// reference defaults (512 antennas at 3 mm, 6 rings, 30 dBm pilots over a
/// -72 dB path into -80 dBm noise, 2000 trials at 40 m). Powers are in dBm
/// and the path gain in dB, like a link budget.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub antennas: Option<usize>,
    pub wavelength_m: Option<f64>,
    pub rings: Option<usize>,
    pub ring_scale_m: Option<f64>,
    pub pilot_power_dbm: Option<f64>,
    pub noise_power_dbm: Option<f64>,
    /// Force an exactly zero noise floor (dBm cannot express it).
    pub noiseless: Option<bool>,
    pub path_gain_db: Option<f64>,
    pub stage1_layers: Option<u32>,
    pub two_phase_candidates: Option<usize>,
    pub two_phase_threshold: Option<f64>,
    /// "window" or "strict".
    pub last_layer_rule: Option<String>,
    /// Engine `train` runs; `sweep` uses `engines`.
    pub engine: Option<String>,
    /// "all" or a comma-separated list.
    pub engines: Option<String>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub user_distance_m: Option<f64>,
    /// Pin the user angle; omit to draw it per trial.
    pub user_angle: Option<f64>,
    pub parallel: Option<bool>,
    /// "distance", "snr", or "antennas".
    pub sweep: Option<String>,
    pub distance_grid_m: Option<Vec<f64>>,
    pub snr_grid_db: Option<Vec<f64>>,
    pub snr_distance_m: Option<f64>,
    pub antennas_grid: Option<Vec<usize>>,
    /// Center-block size for `profile`.
    pub profile_subarray: Option<usize>,
}

/// Command-line overrides; flags win over file keys.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub engines: Option<String>,
    pub trials: Option<u64>,
    pub last_layer_rule: Option<String>,
}

pub struct App {
    pub scenario: ScenarioConfig,
    pub sweep: Sweep,
    pub profile_subarray: usize,
    train_engine: EngineKind,
    engines_overridden: bool,
    resolved: FileConfig,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

pub fn resolve(file: FileConfig, over: &Overrides) -> Result<App> {
    let array = ArrayConfig::new(
        file.antennas.unwrap_or(512),
        file.wavelength_m.unwrap_or(0.003),
    )?;
    let rings = file.rings.unwrap_or(6);
    let s_delta = file.ring_scale_m.unwrap_or(68.27);

    let pilot_power = dbm_to_watts(file.pilot_power_dbm.unwrap_or(30.0));
    let noiseless = file.noiseless.unwrap_or(false);
    let noise_power = if noiseless {
        0.0
    } else {
        dbm_to_watts(file.noise_power_dbm.unwrap_or(-80.0))
    };
    let rho0 = 10f64.powf(file.path_gain_db.unwrap_or(-72.0) / 10.0);

    let rule_name = over
        .last_layer_rule
        .clone()
        .or(file.last_layer_rule)
        .unwrap_or_else(|| "window".into());
    let defaults = EngineParams::defaults(&array);
    let params = EngineParams {
        stage1_layers: file.stage1_layers.unwrap_or(defaults.stage1_layers),
        two_phase_k: file.two_phase_candidates.unwrap_or(defaults.two_phase_k),
        two_phase_eta: file.two_phase_threshold.unwrap_or(defaults.two_phase_eta),
        last_layer_rule: LastLayerRule::from_str(&rule_name)?,
    };

    let engines_overridden = over.engines.is_some();
    let engines_str = over
        .engines
        .clone()
        .or(file.engines)
        .unwrap_or_else(|| "all".into());
    let engines = EngineKind::parse_list(&engines_str)?;
    let train_engine = if engines_overridden && engines.len() == 1 {
        engines[0]
    } else {
        EngineKind::from_str(file.engine.as_deref().unwrap_or("two-stage"))?
    };

    let scenario = ScenarioConfig {
        array,
        rings,
        s_delta,
        pilot_power,
        noise_power,
        rho0,
        engines,
        params,
        trials: over.trials.or(file.trials).unwrap_or(2000),
        seed: over.seed.or(file.seed).unwrap_or(1),
        user_r: file.user_distance_m.unwrap_or(40.0),
        fixed_theta: file.user_angle,
        parallel: file.parallel.unwrap_or(true),
    };
    scenario.validate()?;

    let distance_grid = file
        .distance_grid_m
        .unwrap_or_else(|| Sweep::default_distance().values());
    let snr_grid = file
        .snr_grid_db
        .unwrap_or_else(|| Sweep::default_snr().values());
    let snr_distance = file.snr_distance_m.unwrap_or(40.0);
    let antennas_grid = file.antennas_grid.unwrap_or(vec![64, 128, 256, 512]);
    let sweep_name = file.sweep.unwrap_or_else(|| "distance".into());
    let sweep = match sweep_name.as_str() {
        "distance" => Sweep::Distance {
            grid: distance_grid.clone(),
        },
        "snr" => Sweep::Snr {
            gamma_db: snr_grid.clone(),
            r: snr_distance,
        },
        "antennas" => Sweep::Antennas {
            grid: antennas_grid.clone(),
        },
        other => bail!("unknown sweep variable {other:?}; use distance, snr, or antennas"),
    };

    let profile_subarray = file.profile_subarray.unwrap_or(128);

    let resolved = FileConfig {
        antennas: Some(array.n),
        wavelength_m: Some(array.lambda_c),
        rings: Some(rings),
        ring_scale_m: Some(s_delta),
        pilot_power_dbm: Some(watts_to_dbm(pilot_power)),
        noise_power_dbm: (!noiseless).then(|| watts_to_dbm(noise_power)),
        noiseless: Some(noiseless),
        path_gain_db: Some(10.0 * rho0.log10()),
        stage1_layers: Some(params.stage1_layers),
        two_phase_candidates: Some(params.two_phase_k),
        two_phase_threshold: Some(params.two_phase_eta),
        last_layer_rule: Some(params.last_layer_rule.to_string()),
        engine: Some(train_engine.id().into()),
        engines: Some(
            scenario
                .engines
                .iter()
                .map(|e| e.id())
                .collect::<Vec<_>>()
                .join(","),
        ),
        trials: Some(scenario.trials),
        seed: Some(scenario.seed),
        user_distance_m: Some(scenario.user_r),
        user_angle: scenario.fixed_theta,
        parallel: Some(scenario.parallel),
        sweep: Some(sweep_name),
        distance_grid_m: Some(distance_grid),
        snr_grid_db: Some(snr_grid),
        snr_distance_m: Some(snr_distance),
        antennas_grid: Some(antennas_grid),
        profile_subarray: Some(profile_subarray),
    };

    Ok(App {
        scenario,
        sweep,
        profile_subarray,
        train_engine,
        engines_overridden,
        resolved,
    })
}

impl App {
    /// Engine for `train`. An explicit `--engines` list must name exactly
    /// one; otherwise the `engine` config key (default two-stage) applies.
    pub fn train_engine(&self) -> Result<EngineKind> {
        if self.engines_overridden && self.scenario.engines.len() != 1 {
            bail!("train runs a single engine; pass exactly one with --engines");
        }
        Ok(self.train_engine)
    }

    /// Echo of the fully resolved configuration, for provenance.
    pub fn write_resolved(&self, out_dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(&self.resolved).context("serializing config")?;
        let path = out_dir.join("config.resolved.toml");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
