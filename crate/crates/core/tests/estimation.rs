use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splinenet::constructor::{build_tilde_b_vector, build_tilde_d, tilde_d_bound};
use splinenet::estimator::{
    additive_network_from, additive_to_network, design_matrix, fit_additive, fit_pilot,
    pilot_network_gap, pilot_to_network,
};
use splinenet::inference::{
    gof_from_values, leverage, leverage_explicit, pointwise_ci_with, statistic_gap_bound,
    NoiseVariance,
};
use splinenet::{Dataset, KnotGrid, TruncatedPowerBasis};

fn random_data(seed: u64, n: usize, d: usize, f: impl Fn(&[f64]) -> f64, noise: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    let y = x
        .chunks(d)
        .map(|p| f(p) + noise * (rng.random::<f64>() - 0.5))
        .collect();
    Dataset::new(d, x, y).unwrap()
}

fn uniform_points(d: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..per_axis)
        .map(|r| r as f64 / (per_axis - 1) as f64)
        .collect();
    if d == 1 {
        return axis.iter().map(|&a| vec![a]).collect();
    }
    axis.iter()
        .flat_map(|&a| axis.iter().map(move |&b| vec![a, b]))
        .collect()
}

#[test]
fn normal_equations_hold() {
    let g = KnotGrid::cardinal(6, 3).unwrap();
    let ds = random_data(1, 500, 2, |p| (3.0 * p[0]).sin() * p[1], 0.4);
    let fit = fit_pilot(&ds, &g, 2).unwrap();
    let phi = design_matrix(&ds, &g, 2).unwrap();
    let y = DVector::from_column_slice(ds.y());
    let c = DVector::from_column_slice(&fit.coeffs);
    let lhs = &fit.gram * &c - phi.tr_mul(&y);
    assert!(lhs.amax() <= 1e-8 * phi.tr_mul(&y).amax());
    assert!((&fit.gram - fit.gram.transpose()).amax() == 0.0);
    assert!(fit.gram.clone().symmetric_eigenvalues().min() > -1e-10);
}

#[test]
fn projection_is_idempotent_and_linear() {
    let g = KnotGrid::cardinal(5, 4).unwrap();
    let ds = random_data(2, 300, 1, |p| p[0].exp(), 1.0);
    let fit = fit_pilot(&ds, &g, 1).unwrap();
    let again = fit_pilot(&ds.with_responses(fit.fitted.clone()).unwrap(), &g, 1).unwrap();
    for (a, b) in fit.coeffs.iter().zip(&again.coeffs) {
        assert!((a - b).abs() < 1e-10);
    }
    let scaled = fit_pilot(
        &ds.with_responses(ds.y().iter().map(|v| 2.5 * v).collect())
            .unwrap(),
        &g,
        1,
    )
    .unwrap();
    for x in [0.0, 0.37, 1.0] {
        let a = fit.predict(&[x]).unwrap();
        assert!((scaled.predict(&[x]).unwrap() - 2.5 * a).abs() < 1e-10 * (1.0 + a.abs()));
    }
}

#[test]
fn square_design_interpolates() {
    let g = KnotGrid::cardinal(4, 2).unwrap();
    let x: Vec<f64> = (0..5).map(|r| r as f64 / 4.0).collect();
    let y = vec![0.3, -1.0, 2.0, 0.5, 1.5];
    let ds = Dataset::new(1, x.clone(), y.clone()).unwrap();
    let fit = fit_pilot(&ds, &g, 1).unwrap();
    let phi = design_matrix(&ds, &g, 1).unwrap();
    let direct = phi.lu().solve(&DVector::from_vec(y.clone())).unwrap();
    for (a, b) in fit.coeffs.iter().zip(direct.iter()) {
        assert!((a - b).abs() < 1e-10);
    }
    for (xi, yi) in x.iter().zip(&y) {
        assert!((fit.predict(&[*xi]).unwrap() - yi).abs() < 1e-6);
    }
}

#[test]
fn smooth_function_projection_error_is_small() {
    let g = KnotGrid::cardinal(8, 4).unwrap();
    let f = |p: &[f64]| (2.0 * std::f64::consts::PI * p[0]).sin();
    let ds = random_data(3, 2000, 1, f, 0.0);
    let fit = fit_pilot(&ds, &g, 1).unwrap();
    let worst = (0..ds.n())
        .map(|i| (fit.fitted[i] - ds.y()[i]).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3, "{worst}");

    // Best continuous L² approximation on a fine uniform grid as reference.
    let xs: Vec<f64> = (0..4001).map(|r| r as f64 / 4000.0).collect();
    let b = DMatrix::from_fn(xs.len(), g.basis_len(), |r, c| {
        g.eval_basis_vector(xs[r]).unwrap()[c]
    });
    let target = DVector::from_iterator(xs.len(), xs.iter().map(|&x| f(&[x])));
    let best = b.clone().svd(true, true).solve(&target, 1e-12).unwrap();
    let best_err = (&b * &best - &target).amax();
    assert!(worst <= 10.0 * best_err.max(1e-6), "{worst} vs {best_err}");
}

#[test]
fn network_gap_respects_bound() {
    let g = KnotGrid::cardinal(4, 2).unwrap();
    let ds = random_data(4, 400, 2, |p| p[0] - p[1] * p[1], 0.5);
    let fit = fit_pilot(&ds, &g, 2).unwrap();
    let m = 8;
    let net = pilot_to_network(&fit, m).unwrap();
    let dnet = build_tilde_d(&g, 2, m).unwrap();
    let bound = pilot_network_gap(&fit, &dnet);
    assert_eq!(dnet.bound, tilde_d_bound(m, 2, 2));
    let mut worst = 0.0f64;
    for p in uniform_points(2, 81) {
        worst = worst.max((net.evaluate(&p).unwrap()[0] - fit.predict(&p).unwrap()).abs());
    }
    assert!(worst <= bound, "{worst} > {bound}");
}

#[test]
fn order_two_network_equals_pilot() {
    let g = KnotGrid::cardinal(6, 2).unwrap();
    let ds = random_data(5, 200, 1, |p| p[0] * p[0], 0.2);
    let fit = fit_pilot(&ds, &g, 1).unwrap();
    for m in [1, 4] {
        let net = pilot_to_network(&fit, m).unwrap();
        for p in uniform_points(1, 501) {
            assert!((net.evaluate(&p).unwrap()[0] - fit.predict(&p).unwrap()).abs() < 1e-10);
        }
    }
    let zero = pilot_to_network(
        &fit_pilot(&ds.with_responses(vec![0.0; 200]).unwrap(), &g, 1).unwrap(),
        3,
    )
    .unwrap();
    assert_eq!(zero.evaluate(&[0.4]).unwrap()[0], 0.0);
}

#[test]
fn additive_centred_linear_signal() {
    let basis = TruncatedPowerBasis::cardinal(&[(4, 2), (4, 2)]).unwrap();
    let ds = random_data(6, 300, 2, |p| p[0] - 0.5, 0.0);
    let fit = fit_additive(&ds, &basis).unwrap();
    assert!(fit.alpha.abs() < 1e-6);
    for x in [0.0, 0.25, 0.8, 1.0] {
        assert!((fit.component(0, x).unwrap() - (x - 0.5)).abs() < 1e-6);
        assert!(fit.component(1, x).unwrap().abs() < 1e-6);
    }
    for i in 0..ds.n() {
        let p = ds.point(i);
        let raw = fit.raw_intercept
            + fit.raw_component(0, p[0]).unwrap()
            + fit.raw_component(1, p[1]).unwrap();
        assert!((fit.predict(p).unwrap() - raw).abs() < 1e-10);
    }
}

#[test]
fn additive_network_gap_and_cross_path() {
    let basis = TruncatedPowerBasis::cardinal(&[(5, 3), (4, 4)]).unwrap();
    let ds = random_data(7, 600, 2, |p| (4.0 * p[0]).cos() + p[1].powi(3), 0.3);
    let fit = fit_additive(&ds, &basis).unwrap();
    let m = 7;
    let net = additive_to_network(&fit, m).unwrap();
    let bound = fit.network_gap(m);
    let mut worst = 0.0f64;
    for p in uniform_points(2, 61) {
        worst = worst.max((net.evaluate(&p).unwrap()[0] - fit.predict(&p).unwrap()).abs());
    }
    assert!(worst <= bound, "{worst} > {bound}");

    // With one coordinate the additive and tensor pilots span the same space.
    let basis1 = TruncatedPowerBasis::cardinal(&[(5, 3)]).unwrap();
    let ds1 = random_data(8, 300, 1, |p| (4.0 * p[0]).cos(), 0.3);
    let add = fit_additive(&ds1, &basis1).unwrap();
    let g = KnotGrid::cardinal(5, 3).unwrap();
    let tensor = fit_pilot(&ds1, &g, 1).unwrap();
    let bnet = build_tilde_b_vector(&g, m).unwrap();
    let anet = additive_network_from(&add, &[&bnet]).unwrap();
    let tnet = pilot_to_network(&tensor, m).unwrap();
    let combined =
        add.network_gap(m) + pilot_network_gap(&tensor, &build_tilde_d(&g, 1, m).unwrap());
    for p in uniform_points(1, 401) {
        assert!((add.predict(&p).unwrap() - tensor.predict(&p).unwrap()).abs() < 1e-9);
        assert!((anet.evaluate(&p).unwrap()[0] - tnet.evaluate(&p).unwrap()[0]).abs() <= combined);
    }
}

#[test]
fn interval_scales_with_responses() {
    let g = KnotGrid::cardinal(5, 3).unwrap();
    let ds = random_data(9, 400, 1, |p| p[0].sqrt(), 1.0);
    let neg = ds
        .with_responses(ds.y().iter().map(|v| -4.0 * v).collect())
        .unwrap();
    let dnet = build_tilde_d(&g, 1, 10).unwrap();
    let mut out = Vec::new();
    for data in [&ds, &neg] {
        let fit = fit_pilot(data, &g, 1).unwrap();
        let net = splinenet::constructor::assemble_fnet(&fit.coeffs, &dnet).unwrap();
        out.push(pointwise_ci_with(&fit, &net, &[0.6], 0.1, NoiseVariance::Estimated).unwrap());
    }
    assert!((out[1].estimate + 4.0 * out[0].estimate).abs() < 1e-9);
    assert!((out[1].half_width() - 4.0 * out[0].half_width()).abs() < 1e-9);
}

#[test]
fn statistic_gap_within_bound() {
    let g = KnotGrid::cardinal(6, 3).unwrap();
    let ds = random_data(10, 500, 1, |p| 0.3 * p[0], 1.0);
    let fit = fit_pilot(&ds, &g, 1).unwrap();
    let m = 6;
    let dnet = build_tilde_d(&g, 1, m).unwrap();
    let net = splinenet::constructor::assemble_fnet(&fit.coeffs, &dnet).unwrap();
    let values = net.evaluate_flat(ds.x()).unwrap();
    let r = gof_from_values(&fit, &values, 0.05, NoiseVariance::Known(1.0)).unwrap();
    let n = fit.n as f64;
    let q = fit.q();
    let gap = (n * r.t_n - n * r.pilot_t_n).abs() / (2.0 * q as f64).sqrt();
    let bound = statistic_gap_bound(fit.n, q, pilot_network_gap(&fit, &dnet), r.pilot_t_n.sqrt());
    assert!(gap <= bound, "{gap} > {bound}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn leverage_solve_matches_inverse(seed in 0u64..1000, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let g = KnotGrid::cardinal(3, 3).unwrap();
        let ds = random_data(seed, 200, 2, |p| p[0] + p[1], 1.0);
        let fit = fit_pilot(&ds, &g, 2).unwrap();
        let a = leverage(&fit, &[x, y]).unwrap();
        let b = leverage_explicit(&fit, &[x, y]).unwrap();
        prop_assert!(a > 0.0);
        prop_assert!((a - b).abs() <= 1e-8 * a);
    }

    #[test]
    fn additive_components_have_zero_mean(seed in 0u64..1000) {
        let basis = TruncatedPowerBasis::cardinal(&[(3, 3), (5, 2)]).unwrap();
        let ds = random_data(seed, 150, 2, |p| (p[0] - p[1]).abs(), 1.0);
        let fit = fit_additive(&ds, &basis).unwrap();
        // Simpson's rule is exact for the piecewise quadratics on knot-aligned panels.
        for j in 0..2 {
            let panels = 60;
            let h = 1.0 / panels as f64;
            let mut integral = 0.0;
            for r in 0..panels {
                let a = r as f64 * h;
                integral += h / 6.0
                    * (fit.component(j, a).unwrap()
                        + 4.0 * fit.component(j, a + h / 2.0).unwrap()
                        + fit.component(j, a + h).unwrap());
            }
            prop_assert!(integral.abs() < 1e-10, "component {} integrates to {}", j, integral);
        }
    }
}
