use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use nearbeam::array::{make_channel, MeasurementOracle, UserLocation};
use nearbeam::codebook::{angular_codebook, gain_profile, PolarCodebook};
use nearbeam::engines::{
    optimal_polar_index, overhead_table, run_exhaustive, run_far_exhaustive,
    run_far_hierarchical, run_perfect_csi, run_two_phase, run_two_stage, EngineKind,
    SearchCodebooks, TrainingResult,
};
use nearbeam::experiments::{
    achievable_rate, run_sweep, sub_seed, success_indicator, trial_user, write_records_csv,
};

use crate::config::App;

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn codebook(app: &App, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let sc = &app.scenario;
    let book = PolarCodebook::new(sc.array, sc.rings, sc.s_delta)?;

    let csv_path = out.join("codebook.csv");
    book.export_csv(create(&csv_path)?)?;
    let bin_path = out.join("codebook.bin");
    book.export_weights_bin(create(&bin_path)?)?;
    app.write_resolved(out)?;

    println!(
        "{} codewords ({} angles x {} rings) -> {}, weights -> {}",
        book.len(),
        sc.array.n,
        sc.rings,
        csv_path.display(),
        bin_path.display()
    );
    Ok(())
}

pub fn profile(app: &App, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let sc = &app.scenario;
    let n = sc.array.n;
    let sub = app.profile_subarray;
    if !sub.is_power_of_two() || sub < 2 || sub > n {
        bail!("profile_subarray must be a power of two in 2..={n}, got {sub}");
    }
    let user = UserLocation::new(sc.fixed_theta.unwrap_or(0.0), sc.user_r)?;
    let full = gain_profile(&sc.array, user, sc.array.levels())?;
    let center = gain_profile(&sc.array, user, sub.trailing_zeros())?;

    let path = out.join("profile.csv");
    let mut w = create(&path)?;
    writeln!(w, "sweep,beam,theta,gain")?;
    for (rows, name) in [(&full, "full"), (&center, "sub")] {
        for (i, (theta, gain)) in rows.iter().enumerate() {
            writeln!(w, "{},{},{},{}", name, i + 1, theta, gain)?;
        }
    }
    w.flush()?;
    app.write_resolved(out)?;

    let peak = |rows: &[(f64, f64)]| {
        rows.iter()
            .cloned()
            .fold((0.0, f64::MIN), |best, x| if x.1 > best.1 { x } else { best })
    };
    let (th_full, _) = peak(&full);
    let (th_sub, _) = peak(&center);
    println!(
        "user (theta {}, {} m): full-array peak at theta {th_full}, \
         {sub}-element center block peak at theta {th_sub} -> {}",
        user.theta,
        user.r,
        path.display()
    );
    Ok(())
}

pub fn train(app: &App, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let sc = &app.scenario;
    let engine = app.train_engine()?;

    let user = trial_user(sc.seed, 0, 0, sc.fixed_theta, sc.user_r);
    let channel = make_channel(user, sc.rho0, &sc.array)?;
    let book = PolarCodebook::new(sc.array, sc.rings, sc.s_delta)?;

    let result: TrainingResult = if engine == EngineKind::PerfectCsi {
        run_perfect_csi(&channel, &book)
    } else {
        let mut oracle = MeasurementOracle::new(
            channel.clone(),
            sc.pilot_power,
            sc.noise_power,
            sub_seed(sc.seed, 0, 0, engine.lane()),
        )?;
        match engine {
            EngineKind::Exhaustive => run_exhaustive(&mut oracle, &book),
            EngineKind::TwoPhase => {
                let angular = angular_codebook(&sc.array);
                run_two_phase(&mut oracle, &book, &angular, &sc.params)
            }
            EngineKind::TwoStage | EngineKind::FarHierarchical => {
                let books =
                    SearchCodebooks::new(sc.array, sc.rings, sc.s_delta, sc.params.stage1_layers)?;
                if engine == EngineKind::TwoStage {
                    run_two_stage(&mut oracle, &books, &sc.params)
                } else {
                    run_far_hierarchical(&mut oracle, &books)
                }
            }
            EngineKind::FarExhaustive => {
                let angular = angular_codebook(&sc.array);
                run_far_exhaustive(&mut oracle, &angular, sc.array.levels())
            }
            EngineKind::PerfectCsi => unreachable!(),
        }
    };

    let truth = optimal_polar_index(&channel, &book);
    let hit = success_indicator(&result, truth, &book)?;
    let rate = achievable_rate(&channel, &result.chosen, sc.pilot_power, sc.noise_power);

    let trace_path = out.join("trace.jsonl");
    result.write_trace_jsonl(create(&trace_path)?)?;

    let summary_path = out.join("summary.txt");
    let mut w = create(&summary_path)?;
    writeln!(w, "engine = {}", engine.id())?;
    writeln!(w, "user_theta = {}", user.theta)?;
    writeln!(w, "user_distance_m = {}", user.r)?;
    writeln!(w, "cell = {}:{}", result.polar_index.0, result.polar_index.1)?;
    writeln!(w, "theta_hat = {}", result.theta_hat)?;
    writeln!(w, "distance_hat_m = {}", result.r_hat)?;
    writeln!(w, "pilots = {}", result.pilots)?;
    writeln!(w, "optimal_cell = {}:{}", truth.0, truth.1)?;
    writeln!(w, "success = {hit}")?;
    writeln!(w, "rate_bps_hz = {rate}")?;
    w.flush()?;
    app.write_resolved(out)?;

    println!(
        "{}: cell {}:{}, theta_hat {}, distance_hat {} m, pilots {}, success {hit} -> {}",
        engine.id(),
        result.polar_index.0,
        result.polar_index.1,
        result.theta_hat,
        result.r_hat,
        result.pilots,
        trace_path.display()
    );
    Ok(())
}

pub fn sweep(app: &App, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let sc = &app.scenario;

    println!("pilot overhead at {} antennas, {} rings:", sc.array.n, sc.rings);
    println!("{:<18} {:>8} {:>8}", "engine", "formula", "live");
    for row in overhead_table(&sc.array, sc.rings, sc.s_delta, &sc.params)? {
        println!("{:<18} {:>8} {:>8}", row.engine.id(), row.formula, row.live);
    }

    let t0 = Instant::now();
    let records = run_sweep(sc, &app.sweep)?;
    let path = out.join("results.csv");
    write_records_csv(&records, create(&path)?)?;
    app.write_resolved(out)?;

    println!(
        "{} engines x {} points, {} trials each in {:.1} s -> {}",
        sc.engines.len(),
        records.len() / sc.engines.len(),
        sc.trials,
        t0.elapsed().as_secs_f64(),
        path.display()
    );
    Ok(())
}
