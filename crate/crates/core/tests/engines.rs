use nearbeam::array::{
    beam_gain, make_channel, ArrayConfig, ChannelRealization, MeasurementOracle, UserLocation,
};
use nearbeam::codebook::{angular_codebook, CodewordId, LastLayerRule, PolarCodebook};
use nearbeam::engines::{
    optimal_polar_index, overhead, overhead_table, run_exhaustive, run_far_exhaustive,
    run_far_hierarchical, run_perfect_csi, run_two_phase, run_two_stage, EngineKind,
    EngineParams, SearchCodebooks, TraceRecord, TrainingResult,
};
use nearbeam::Error;

const RHO0: f64 = 1e-7;

fn reference() -> ArrayConfig {
    ArrayConfig::new(512, 0.003).unwrap()
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

fn channel(theta: f64, r: f64, cfg: &ArrayConfig) -> ChannelRealization {
    make_channel(UserLocation::new(theta, r).unwrap(), RHO0, cfg).unwrap()
}

fn noiseless(ch: &ChannelRealization) -> MeasurementOracle {
    MeasurementOracle::new(ch.clone(), 1.0, 0.0, 0).unwrap()
}

/// Noiseless measured powers scale as n * |gain|^2 * beam_gain^2; invert that
/// to compare trace powers against frozen beam gains.
fn gains_of(rec: &TraceRecord, ch: &ChannelRealization) -> Vec<f64> {
    let scale = (ch.h_vec.len() as f64).sqrt() * ch.gain.norm();
    rec.powers.iter().map(|p| p.sqrt() / scale).collect()
}

fn polar_of(id: CodewordId) -> (usize, usize) {
    match id {
        CodewordId::Polar { n, s } => (n, s),
        other => panic!("expected polar id, got {other}"),
    }
}

#[test]
fn overhead_reference_counts() {
    let cfg = reference();
    let params = EngineParams::defaults(&cfg);
    assert_eq!(params.stage1_layers, 7);
    let rows = overhead_table(&cfg, 6, 68.27, &params).unwrap();
    let got: Vec<(EngineKind, u64, u64)> =
        rows.iter().map(|r| (r.engine, r.formula, r.live)).collect();
    assert_eq!(
        got,
        [
            (EngineKind::Exhaustive, 3072, 3072),
            (EngineKind::TwoPhase, 518, 518),
            (EngineKind::FarExhaustive, 512, 512),
            (EngineKind::FarHierarchical, 18, 18),
            (EngineKind::TwoStage, 24, 24),
        ]
    );

    // Strict last layer widens the final candidate set from 6 to 8.
    let strict = EngineParams {
        last_layer_rule: LastLayerRule::Strict,
        ..params
    };
    assert_eq!(overhead(&strict, &cfg, 6).unwrap(), 26);
    let rows = overhead_table(&cfg, 6, 68.27, &strict).unwrap();
    assert_eq!(rows[4].formula, 26);
    assert_eq!(rows[4].live, 26);

    // Halving the array drops one joint layer.
    let cfg256 = ArrayConfig::new(256, 0.003).unwrap();
    let p256 = EngineParams {
        stage1_layers: 6,
        ..EngineParams::defaults(&cfg256)
    };
    assert_eq!(overhead(&p256, &cfg256, 6).unwrap(), 22);
    let rows = overhead_table(&cfg256, 6, 68.27, &p256).unwrap();
    assert_eq!(rows[4].live, 22);

    // Small instance used by the property suite.
    let cfg16 = ArrayConfig::new(16, 0.003).unwrap();
    let p16 = EngineParams::defaults(&cfg16);
    assert_eq!(p16.stage1_layers, 2);
    assert_eq!(overhead(&p16, &cfg16, 3).unwrap(), 12);

    // Geometry where the columns legitimately split: the formula's nominal
    // winner maps onto ring 1 (window clipped to two slots) while the probe's
    // winner sits interior and gets the full three.
    let cfg64 = ArrayConfig::new(64, 0.003).unwrap();
    let p64 = EngineParams::defaults(&cfg64);
    assert_eq!(overhead(&p64, &cfg64, 4).unwrap(), 16);
    let rows = overhead_table(&cfg64, 4, 1.0667, &p64).unwrap();
    assert_eq!((rows[4].formula, rows[4].live), (16, 18));
}

#[test]
fn two_stage_reference_trace() {
    let cfg = reference();
    let ch = channel(0.0, 40.0, &cfg);
    let params = EngineParams::defaults(&cfg);
    let books = SearchCodebooks::new(cfg, 6, 68.27, params.stage1_layers).unwrap();
    let mut oracle = noiseless(&ch);
    let res = run_two_stage(&mut oracle, &books, &params);

    assert_eq!(res.engine, EngineKind::TwoStage);
    assert_eq!(res.polar_index, (256, 2));
    assert_eq!(res.theta_hat, -0.001953125);
    close(res.r_hat.finite().unwrap(), 34.13486978530884, 1e-12);
    assert_eq!(res.pilots, 24);
    assert_eq!(oracle.pilots_used(), 24);

    assert_eq!(res.trace.len(), 9);
    let layers: Vec<u32> = res.trace.iter().map(|t| t.layer).collect();
    assert_eq!(layers, [1, 2, 3, 4, 5, 6, 7, 8, 9]);
    let counts: Vec<usize> = res.trace.iter().map(|t| t.tested.len()).collect();
    assert_eq!(counts, [2, 2, 2, 2, 2, 2, 2, 4, 6]);

    // Angle-only descent path: a broadside tie at the top layer resolves to
    // the lower index, then the right child wins every round.
    let winners: Vec<CodewordId> = res.trace.iter().map(|t| t.winner).collect();
    for (k, i) in [1usize, 2, 4, 8, 16, 32, 64].iter().enumerate() {
        assert_eq!(winners[k], CodewordId::Upper { layer: k as u32 + 1, i: *i });
    }
    assert_eq!(winners[7], CodewordId::Lower { layer: 8, i: 128, j: 1 });
    assert_eq!(winners[8], CodewordId::Polar { n: 256, s: 2 });

    let g1 = gains_of(&res.trace[0], &ch);
    close(g1[0], 0.044194173824159216, 1e-9);
    close(g1[1], 0.044194173824159216, 1e-9);

    let g8 = gains_of(&res.trace[7], &ch);
    let expect8 = [
        0.15382173071674998,
        0.18393618029139536,
        0.4486255705017895,
        0.43435536211161613,
    ];
    for (g, e) in g8.iter().zip(expect8) {
        close(*g, e, 1e-9);
    }

    let g9 = gains_of(&res.trace[8], &ch);
    let expect9 = [
        0.40053191407936145,
        0.2796253566444854,
        0.2264309028318912,
        0.47459836145819645,
        0.6030677750506731,
        0.6306823563321968,
    ];
    for (g, e) in g9.iter().zip(expect9) {
        close(*g, e, 1e-9);
    }
    let tested9: Vec<(usize, usize)> = res.trace[8].tested.iter().map(|&id| polar_of(id)).collect();
    assert_eq!(tested9, [(255, 0), (255, 1), (255, 2), (256, 0), (256, 1), (256, 2)]);
}

#[test]
fn two_stage_strict_rule() {
    let cfg = reference();
    let ch = channel(0.0, 40.0, &cfg);
    let params = EngineParams {
        last_layer_rule: LastLayerRule::Strict,
        ..EngineParams::defaults(&cfg)
    };
    let books = SearchCodebooks::new(cfg, 6, 68.27, params.stage1_layers).unwrap();
    let res = run_two_stage(&mut noiseless(&ch), &books, &params);
    assert_eq!(res.pilots, 26);
    assert_eq!(res.polar_index, (256, 2));
    assert_eq!(res.trace[8].tested.len(), 8);
}

#[test]
fn two_phase_near_user_recovers_the_center() {
    let cfg = reference();
    let book = PolarCodebook::new(cfg, 6, 68.27).unwrap();
    let angular = angular_codebook(&cfg);
    let params = EngineParams::defaults(&cfg);

    // At 5 m the angular sweep smears into a 34-cell plateau whose argmax
    // (a broadside mirror tie, resolved low to cell 242) sits well off the
    // true angle; the run midpoint recovers the center cell 256.
    let ch = channel(0.0, 5.0, &cfg);
    let res = run_two_phase(&mut noiseless(&ch), &book, &angular, &params);
    assert_eq!(res.pilots, 518);
    assert_eq!(res.trace.len(), 2);
    assert_eq!(res.trace[0].tested.len(), 512);
    assert_eq!(res.trace[0].winner, CodewordId::Angular { n: 242 });
    let rings: Vec<(usize, usize)> = res.trace[1].tested.iter().map(|&id| polar_of(id)).collect();
    assert_eq!(rings, [(256, 0), (256, 1), (256, 2), (256, 3), (256, 4), (256, 5)]);
    assert_eq!(res.polar_index, (256, 5));
}

#[test]
fn two_phase_far_user_follows_the_peak() {
    let cfg = reference();
    let book = PolarCodebook::new(cfg, 6, 68.27).unwrap();
    let angular = angular_codebook(&cfg);
    let params = EngineParams::defaults(&cfg);

    let ch = channel(0.32, 2.0 * cfg.r_rayleigh, &cfg);
    let res = run_two_phase(&mut noiseless(&ch), &book, &angular, &params);
    assert_eq!(res.trace[0].winner, CodewordId::Angular { n: 338 });
    // Far of the Rayleigh distance the run is narrow and the single
    // candidate is the argmax beam itself; the planar ring wins.
    assert_eq!(res.trace[1].tested.len(), 6);
    assert_eq!(polar_of(res.trace[1].tested[0]).0, 338);
    assert_eq!(res.polar_index, (338, 0));
    assert!(res.r_hat.is_infinite());
}

#[test]
fn two_phase_carries_k_candidates() {
    let cfg = reference();
    let book = PolarCodebook::new(cfg, 6, 68.27).unwrap();
    let angular = angular_codebook(&cfg);
    let params = EngineParams {
        two_phase_k: 3,
        ..EngineParams::defaults(&cfg)
    };
    let ch = channel(0.0, 5.0, &cfg);
    let res = run_two_phase(&mut noiseless(&ch), &book, &angular, &params);
    assert_eq!(res.pilots, 512 + 3 * 6);
    assert_eq!(res.trace[1].tested.len(), 18);
    let angles: Vec<usize> = res.trace[1]
        .tested
        .iter()
        .step_by(6)
        .map(|&id| polar_of(id).0)
        .collect();
    assert_eq!(angles.len(), 3);
    assert_eq!(angles[1], angles[0] + 1);
    assert_eq!(angles[2], angles[1] + 1);
}

#[test]
fn far_engines_reference_behaviour() {
    let cfg = reference();
    let book = PolarCodebook::new(cfg, 6, 68.27).unwrap();
    let angular = angular_codebook(&cfg);
    let books = SearchCodebooks::new(cfg, 6, 68.27, 7).unwrap();

    let ch = channel(0.0, 40.0, &cfg);
    let fh = run_far_hierarchical(&mut noiseless(&ch), &books);
    assert_eq!(fh.engine, EngineKind::FarHierarchical);
    assert_eq!(fh.pilots, 18);
    assert_eq!(fh.polar_index, (256, 0));
    assert_eq!(fh.theta_hat, -0.001953125);
    assert!(fh.r_hat.is_infinite());
    assert_eq!(fh.trace.len(), 9);
    assert!(fh.trace.iter().all(|t| t.tested.len() == 2));

    let fe = run_far_exhaustive(&mut noiseless(&ch), &angular, cfg.levels());
    assert_eq!(fe.pilots, 512);
    // Another broadside mirror tie, again resolved to the lower cell.
    assert_eq!(fe.polar_index, (256, 0));

    // Genuinely far user: both planar engines and the grid optimum agree on
    // the planar ring.
    let far = channel(0.25, 500.0, &cfg);
    let truth = optimal_polar_index(&far, &book);
    assert_eq!(truth.1, 0);
    let fh = run_far_hierarchical(&mut noiseless(&far), &books);
    let fe = run_far_exhaustive(&mut noiseless(&far), &angular, cfg.levels());
    assert_eq!(fh.polar_index, truth);
    assert_eq!(fe.polar_index, truth);
}

#[test]
fn exhaustive_matches_noiseless_optimum() {
    let cfg = reference();
    let book = PolarCodebook::new(cfg, 6, 68.27).unwrap();
    for (theta, r) in [(0.0, 40.0), (0.41, 12.0), (-0.88, 66.0)] {
        let ch = channel(theta, r, &cfg);
        let res = run_exhaustive(&mut noiseless(&ch), &book);
        assert_eq!(res.polar_index, optimal_polar_index(&ch, &book));
        assert_eq!(res.pilots, 3072);
        assert_eq!(res.trace.len(), 1);
        assert_eq!(res.trace[0].tested.len(), 3072);
    }

    // Frozen reference point, with the winning beam gain.
    let ch = channel(0.0, 40.0, &cfg);
    let res = run_exhaustive(&mut noiseless(&ch), &book);
    assert_eq!(res.polar_index, (256, 2));
    let b = ch.direction(&cfg);
    let g = beam_gain(&b, &res.chosen.weights).unwrap();
    close(g, 0.6306823563321969, 1e-9);
}

#[test]
fn broadside_tie_resolves_to_the_lower_angle() {
    let cfg = reference();
    let book = PolarCodebook::new(cfg, 6, 68.27).unwrap();
    let ch = channel(0.0, 40.0, &cfg);
    // The mirror cell (257, 2) carries the same gain by symmetry, so the
    // argmax is a genuine tie and must resolve to the lower index.
    let b = ch.direction(&cfg);
    let g256 = beam_gain(&b, &book.entry(256, 2).unwrap().weights).unwrap();
    let g257 = beam_gain(&b, &book.entry(257, 2).unwrap().weights).unwrap();
    close(g256, g257, 1e-12 * g256);
    assert_eq!(optimal_polar_index(&ch, &book), (256, 2));
}

#[test]
fn far_users_pick_the_planar_ring() {
    let cfg = reference();
    let book = PolarCodebook::new(cfg, 6, 68.27).unwrap();
    // Deterministic sample: 100 users beyond the Rayleigh distance.
    for k in 0..100 {
        let theta = -0.97 + 1.94 * k as f64 / 99.0;
        let r = cfg.r_rayleigh * (1.0 + 3.0 * (k as f64 * 0.37).fract());
        let ch = channel(theta, r, &cfg);
        let (_, s) = optimal_polar_index(&ch, &book);
        assert_eq!(s, 0, "user ({theta}, {r}) mapped to ring {s}");
    }
}

#[test]
fn perfect_csi_is_a_zero_pilot_upper_bound() {
    let cfg = reference();
    let book = PolarCodebook::new(cfg, 6, 68.27).unwrap();
    for (theta, r) in [(0.0, 40.0), (0.5, 15.0), (-0.73, 31.0)] {
        let ch = channel(theta, r, &cfg);
        let res = run_perfect_csi(&ch, &book);
        assert_eq!(res.engine, EngineKind::PerfectCsi);
        assert_eq!(res.pilots, 0);
        assert!(res.trace.is_empty());
        assert_eq!(res.chosen.id, CodewordId::Exact);
        assert_eq!(res.polar_index, optimal_polar_index(&ch, &book));
        let b = ch.direction(&cfg);
        let g = beam_gain(&b, &res.chosen.weights).unwrap();
        close(g, 1.0, 1e-9);
    }
}

#[test]
fn trace_export_is_json_lines() {
    let cfg = reference();
    let ch = channel(0.0, 40.0, &cfg);
    let params = EngineParams::defaults(&cfg);
    let books = SearchCodebooks::new(cfg, 6, 68.27, params.stage1_layers).unwrap();
    let res = run_two_stage(&mut noiseless(&ch), &books, &params);

    let mut buf = Vec::new();
    res.write_trace_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    for (k, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["layer"], k as u64 + 1);
        assert!(v["tested"].is_array());
        assert_eq!(v["tested"].as_array().unwrap().len(), v["powers"].as_array().unwrap().len());
        assert!(v["winner"].is_string());
    }
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(first["tested"][0], "upper:1:1");
    let last: serde_json::Value = serde_json::from_str(lines[8]).unwrap();
    assert_eq!(last["winner"], "polar:256:2");
}

#[test]
fn params_validation_and_engine_parsing() {
    let cfg = reference();
    let defaults = EngineParams::defaults(&cfg);
    assert_eq!(defaults.stage1_layers, 7);
    assert_eq!(defaults.two_phase_k, 1);
    close(defaults.two_phase_eta, 0.5, 0.0);
    assert_eq!(defaults.last_layer_rule, LastLayerRule::Window);

    for bad in [
        EngineParams { stage1_layers: 0, ..defaults },
        EngineParams { stage1_layers: 8, ..defaults },
        EngineParams { two_phase_k: 0, ..defaults },
        EngineParams { two_phase_eta: 0.0, ..defaults },
        EngineParams { two_phase_eta: 1.5, ..defaults },
    ] {
        assert!(matches!(bad.validate(&cfg), Err(Error::InvalidParam { .. })));
    }
    assert!(defaults.validate(&cfg).is_ok());

    assert!(SearchCodebooks::new(cfg, 6, 68.27, 8).is_err());

    assert_eq!(EngineKind::parse_list("all").unwrap(), EngineKind::ALL_SWEEP.to_vec());
    assert_eq!(
        EngineKind::parse_list("two-stage, exhaustive").unwrap(),
        vec![EngineKind::TwoStage, EngineKind::Exhaustive]
    );
    assert!(matches!(EngineKind::parse_list(""), Err(Error::NoEngines)));
    assert!(matches!(
        EngineKind::parse_list("bogus"),
        Err(Error::UnknownEngine(_))
    ));

    let mut lanes = std::collections::HashSet::new();
    for e in [
        EngineKind::Exhaustive,
        EngineKind::TwoPhase,
        EngineKind::TwoStage,
        EngineKind::FarHierarchical,
        EngineKind::FarExhaustive,
        EngineKind::PerfectCsi,
    ] {
        assert_eq!(e.id().parse::<EngineKind>().unwrap(), e);
        assert!(lanes.insert(e.lane()), "duplicate lane for {e}");
    }
}

#[test]
fn results_report_oracle_pilot_deltas() {
    // Engines report the pilots they spent even on a shared, pre-used oracle.
    let cfg = reference();
    let book = PolarCodebook::new(cfg, 6, 68.27).unwrap();
    let angular = angular_codebook(&cfg);
    let books = SearchCodebooks::new(cfg, 6, 68.27, 7).unwrap();
    let params = EngineParams::defaults(&cfg);
    let ch = channel(0.1, 20.0, &cfg);
    let mut oracle = noiseless(&ch);
    let a: TrainingResult = run_two_stage(&mut oracle, &books, &params);
    let b = run_far_hierarchical(&mut oracle, &books);
    let c = run_two_phase(&mut oracle, &book, &angular, &params);
    assert_eq!(a.pilots, 24);
    assert_eq!(b.pilots, 18);
    assert_eq!(c.pilots, 518);
    assert_eq!(oracle.pilots_used(), 24 + 18 + 518);
}
