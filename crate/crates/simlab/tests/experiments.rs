use splinenet::estimator::fit_pilot;
use splinenet::KnotGrid;
use splinenet_simlab::config::{Bandwidth, Density, MRule, TargetFn};
use splinenet_simlab::datagen::gen_data;
use splinenet_simlab::experiments::*;
use splinenet_simlab::stats::{ks_uniform, mean, variance};
use splinenet_simlab::SimConfig;

fn small_rates() -> SimConfig {
    SimConfig {
        n: vec![200, 400, 800],
        reps: 6,
        seed: 21,
        ..SimConfig::default()
    }
}

fn strip_metadata(r: &ExperimentReport) -> serde_json::Value {
    let mut v = serde_json::to_value(r).unwrap();
    v.as_object_mut().unwrap().remove("metadata");
    v
}

#[test]
fn reports_are_reproducible() {
    let cfg = small_rates();
    let a = run_rate_experiment(&cfg).unwrap();
    let b = run_rate_experiment(&cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&strip_metadata(&a)).unwrap(),
        serde_json::to_string(&strip_metadata(&b)).unwrap()
    );
    let other = run_rate_experiment(&SimConfig { seed: 22, ..cfg }).unwrap();
    assert_ne!(strip_metadata(&a), strip_metadata(&other));
}

#[test]
fn rate_aggregates_recompute_from_records() {
    let report = run_rate_experiment(&small_rates()).unwrap();
    let ReportBody::Rates(r) = &report.body else {
        panic!("wrong report")
    };
    // A JSON round trip is what a downstream reader sees.
    let back: RateReport = serde_json::from_str(&serde_json::to_string(r).unwrap()).unwrap();
    let (means, sp, sn) = RateReport::recompute(&back.records);
    for (s, (n, lp, ln)) in r.summary.iter().zip(means) {
        assert_eq!(s.n, n);
        assert!((s.mean_loss_pilot - lp).abs() <= 1e-12 * lp);
        assert!((s.mean_loss_net - ln).abs() <= 1e-12 * ln);
    }
    assert!((sp.slope - r.slope_pilot.slope).abs() < 1e-12);
    assert!((sn.slope - r.slope_net.slope).abs() < 1e-12);
    assert_eq!(r.gap_violations, 0);
}

#[test]
fn null_aggregates_recompute_from_records() {
    let cfg = SimConfig {
        target: TargetFn::Zero,
        n: vec![300],
        reps: 40,
        tau_known: Some(1.0),
        bandwidth: Bandwidth::Fixed { m: 6 },
        ..SimConfig::default()
    };
    let report = run_null_calibration(&cfg).unwrap();
    let ReportBody::NullCalibration(r) = &report.body else {
        panic!("wrong report")
    };
    let chi2: Vec<f64> = r
        .records
        .iter()
        .map(|x| 300.0 * x.pilot_t_n / x.tau2_used)
        .collect();
    assert!((mean(&chi2) / r.q as f64 - r.mean_chi2_over_q).abs() < 1e-12);
    assert!((variance(&chi2) - r.var_chi2).abs() < 1e-9);
    for rec in &r.records {
        let z = (300.0 * rec.t_n - r.q as f64) / (2.0 * r.q as f64).sqrt();
        assert!((z - rec.z_n).abs() < 1e-9);
        assert!(rec.stat_gap <= rec.stat_gap_bound);
    }
}

#[test]
fn grid_loss_agrees_with_finer_grid() {
    let cfg = SimConfig {
        density: Density::Tilted { a: 0.4 },
        ..SimConfig::default()
    };
    let grid = KnotGrid::cardinal(6, 3).unwrap();
    let fine = EvalGrid::uniform(1, 100_001, &cfg.density);
    let std = EvalGrid::standard(1, &cfg.density);
    for rep in 0..3 {
        let fit = fit_pilot(&gen_data(&cfg, 300, rep).unwrap(), &grid, 1).unwrap();
        let loss = |g: &EvalGrid| {
            let f: Vec<f64> = g
                .points
                .iter()
                .map(|&x| fit.predict(&[x]).unwrap())
                .collect();
            let t: Vec<f64> = g.points.iter().map(|&x| cfg.target.eval(&[x])).collect();
            g.loss(&f, &t)
        };
        let (a, b) = (loss(&std), loss(&fine));
        assert!((a - b).abs() < 0.01 * b, "{a} vs {b}");
    }
}

#[test]
fn uniform_design_passes_ks_check() {
    let cfg = SimConfig::default();
    let n = 10_000;
    let data = gen_data(&cfg, n, 0).unwrap();
    assert!(ks_uniform(data.x()) <= 1.36 / (n as f64).sqrt() * 1.5);
}

#[test]
fn additive_rates_run_and_respect_gap() {
    let cfg = SimConfig {
        target: TargetFn::AdditiveSine {
            amp: 1.0,
            freq: 1.0,
        },
        d: 2,
        additive: true,
        n: vec![300, 600],
        reps: 3,
        ..SimConfig::default()
    };
    let report = run_rate_experiment(&cfg).unwrap();
    let ReportBody::Rates(r) = &report.body else {
        panic!("wrong report")
    };
    assert_eq!(r.gap_violations, 0);
    assert!(r.summary.iter().all(|s| s.relative_gap < 0.05));
    assert!(r.records.iter().all(|x| x.sup_gap <= x.gap_bound));
}

#[test]
fn power_is_size_at_zero_and_grows() {
    let cfg = SimConfig {
        target: TargetFn::Sine {
            amp: std::f64::consts::SQRT_2,
            freq: 1.0,
        },
        n: vec![500],
        reps: 60,
        bandwidth: Bandwidth::Testing { c: 2.0 },
        m_rule: MRule::Fixed { m: 8 },
        scales: vec![0.0, 10.0],
        ..SimConfig::default()
    };
    let report = run_power_curve(&cfg).unwrap();
    let ReportBody::Power(r) = &report.body else {
        panic!("wrong report")
    };
    assert!(r.points[0].power < 0.2);
    assert_eq!(r.points[1].power, 1.0);
    assert_eq!(r.points[0].normalized_signal, 0.0);
    assert!((r.points[1].normalized_signal - 10.0).abs() < 1.0);
}

#[test]
fn coverage_records_match_summary() {
    let cfg = SimConfig {
        n: vec![400],
        reps: 30,
        k: 4,
        bandwidth: Bandwidth::Fixed { m: 6 },
        m_rule: MRule::Fixed { m: 10 },
        ..SimConfig::default()
    };
    let report = run_coverage(&cfg).unwrap();
    let ReportBody::Coverage(r) = &report.body else {
        panic!("wrong report")
    };
    assert_eq!(r.records.len(), 30 * 3);
    for p in &r.points {
        let hits = r
            .records
            .iter()
            .filter(|x| x.x0 == p.x0 && x.covered)
            .count();
        assert_eq!(p.coverage, hits as f64 / 30.0);
    }
}

#[test]
fn diagnostics_hat_functions_and_window() {
    let cfg = SimConfig {
        k: 2,
        diag_draws: 50,
        ..SimConfig::default()
    };
    let report = run_diagnostics(&cfg).unwrap();
    let ReportBody::Diagnostics(r) = &report.body else {
        panic!("wrong report")
    };
    assert!(r.hat_gram_error.unwrap() < 1e-15);
    assert!(r.eigen.iter().all(|e| e.lambda_min_scaled > 0.0));
    assert!(r.window.is_finite());
    assert!(r.norm_equiv[1].sup_ratio < r.norm_equiv[0].sup_ratio);
    for row in &r.norm_equiv {
        assert!(row.max_ratio_draws <= row.sup_ratio + 1e-12);
    }
}
