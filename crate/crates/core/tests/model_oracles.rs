use nlqkd_core::model::{
    dcm_sweep, distance_curves, model_point, optimize_brightness, DistanceSweepConfig, ModelParameters,
};

/// Best key rate on a 2000-point log grid over [5, 11].
fn grid_best(template: &ModelParameters, sigma_d: f64) -> f64 {
    (0..2000)
        .map(|i| {
            let log_b = 5.0 + 6.0 * i as f64 / 1999.0;
            model_point(&template.with_brightness(10f64.powf(log_b)), sigma_d).key_rate
        })
        .fold(0.0, f64::max)
}

#[test]
fn ternary_search_matches_grid_on_every_long_haul_configuration() {
    let cfg = DistanceSweepConfig::default();
    let mut checked = 0;
    for &w in &cfg.widths_ghz {
        for compensated in [true, false] {
            for k in 0..=160 {
                let d = 5.0 * k as f64;
                let template = cfg.template(w, d);
                let sigma_d = cfg.sigma_d_ps(w, d, compensated);
                let opt = optimize_brightness(&template, sigma_d);
                let grid = grid_best(&template, sigma_d);
                if grid > 0.0 {
                    assert!(
                        opt.key_rate >= grid * 0.995,
                        "{w} GHz {compensated} {d} km: {} vs {grid}",
                        opt.key_rate
                    );
                } else {
                    assert!(opt.no_key, "{w} GHz {compensated} {d} km");
                }
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 966);
}

#[test]
fn compensation_extends_reach() {
    let curves = distance_curves(&DistanceSweepConfig::default()).unwrap();
    assert_eq!(curves.len(), 6);
    let reach = |w: f64, c: bool| {
        curves
            .iter()
            .find(|x| x.width_ghz == w && x.compensated == c)
            .unwrap()
            .max_distance_km
            .unwrap()
    };
    for w in [2.0, 10.0, 100.0] {
        assert!(reach(w, true) >= reach(w, false));
    }
    // at 2 GHz the dispersion spread is small next to the coherence time
    assert!(reach(2.0, true) - reach(2.0, false) < 20.0);
    assert!(reach(100.0, true) - reach(100.0, false) > reach(10.0, true) - reach(10.0, false));
    for c in &curves {
        assert!(c.sweep.rows.windows(2).all(|w| w[0].x < w[1].x));
    }
}

#[test]
fn dcm_sweep_tunes_timing_between_jitter_floor_and_max() {
    let sweep = dcm_sweep(
        &ModelParameters::fitted_experiment(),
        107.882,
        0.67,
        -170.0,
        170.0,
        10.0,
        0.0,
    )
    .unwrap();
    let dts: Vec<f64> = sweep.rows.iter().map(|r| r.delta_t_ps).collect();
    let min = dts.iter().copied().fold(f64::INFINITY, f64::min);
    let max = dts.iter().copied().fold(0.0, f64::max);
    // oracle: quadrature sum at the grid points nearest to and farthest from cancellation
    let oracle = |d: f64| (66f64.powi(2) + (0.67f64 * (107.882 + d)).powi(2)).sqrt();
    assert!((min - oracle(-110.0)).abs() < 1e-9);
    assert!((max - oracle(170.0)).abs() < 1e-9);
    let peak = sweep.peak().unwrap();
    assert_eq!(peak.x, -110.0);
}
