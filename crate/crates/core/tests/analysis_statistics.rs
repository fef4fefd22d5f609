mod common;

use common::paper_scenario;
use nlqkd_core::analysis::{
    count_coincidences, evaluate_window, heralding_efficiencies, optimize_window, secure_key_rate,
};
use nlqkd_core::model::{model_point, ModelParameters};
use nlqkd_core::montecarlo::{simulate, Basis, BasisMode, Party, SimulationRun, TimeTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn poisson_stream(rng: &mut ChaCha8Rng, party: Party, rate: f64, duration_s: f64) -> Vec<TimeTag> {
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += -(1.0 - rng.random::<f64>()).ln() / rate;
        if t >= duration_s {
            return out;
        }
        out.push(TimeTag {
            timestamp_ps: (t * 1e12) as i64,
            party,
            basis: Basis::HV,
            outcome: rng.random_range(0..2),
        });
    }
}

#[test]
fn independent_streams_give_closed_form_accidentals() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (r1, r2, t_cc, d) = (2e5, 3e5, 500.0, 2.0);
    let a = poisson_stream(&mut rng, Party::A, r1, d);
    let b = poisson_stream(&mut rng, Party::B, r2, d);
    let tally = count_coincidences(&a, &b, 0.0, t_cc, d).unwrap();
    let expected = r1 * r2 * t_cc * 1e-12 * d;
    let n = tally.total() as f64;
    assert!((n - expected).abs() < 3.0 * expected.sqrt(), "{n} vs {expected}");
    let frac = tally.cc_erroneous as f64 / n;
    assert!((frac - 0.5).abs() < 3.0 * (0.25 / n).sqrt(), "{frac}");
}

#[test]
fn added_noise_never_lowers_qber() {
    let s = paper_scenario(-107.882, 0.0, 0.0);
    let mut noisy = s.clone();
    noisy.arm_a.detector.dark_count_cps = 2.8e5;
    noisy.arm_b.detector.dark_count_cps = 3.5e5;
    let mut q_clean = 0.0;
    let mut q_noisy = 0.0;
    for seed in 0..4 {
        let run = SimulationRun::new(seed, 0.5, BasisMode::matched_halves());
        let c = simulate(&s, &run).unwrap();
        let n = simulate(&noisy, &run).unwrap();
        q_clean += evaluate_window(&c.a, &c.b, 0.0, 66.0, 0.5, 1.1).unwrap().qber;
        q_noisy += evaluate_window(&n.a, &n.b, 0.0, 66.0, 0.5, 1.1).unwrap().qber;
    }
    assert!(q_noisy > q_clean, "{q_noisy} vs {q_clean}");
}

#[test]
fn optimized_window_beats_fitted_width() {
    let s = paper_scenario(-107.882, 2.8e5, 3.5e5);
    let t = simulate(&s, &SimulationRun::new(31, 1.0, BasisMode::matched_halves())).unwrap();
    let (best, fit) = optimize_window(&t.a, &t.b, 0.0, 1.0, 1.1).unwrap();
    let at_fwhm = evaluate_window(&t.a, &t.b, 0.0, fit.fwhm, 1.0, 1.1).unwrap();
    assert!(best.secure_key_rate >= at_fwhm.secure_key_rate);
    assert!(best.qber >= 0.0 && best.qber <= 1.0);
}

#[test]
fn simulated_qber_near_model() {
    // 4 s pooled: ~130 erroneous coincidences at t_cc = ΔT
    let s = paper_scenario(-107.882, 2.8e5, 3.5e5);
    let t = simulate(&s, &SimulationRun::new(77, 4.0, BasisMode::matched_halves())).unwrap();
    let r = evaluate_window(&t.a, &t.b, 0.0, 66.0, 4.0, 1.1).unwrap();
    let model = model_point(&ModelParameters::fitted_experiment(), 0.0);
    let n = r.tally.total() as f64;
    let sigma = (model.qber * (1.0 - model.qber) / n).sqrt();
    assert!(
        (r.qber - model.qber).abs() < 3.0 * sigma,
        "{} vs {}",
        r.qber,
        model.qber
    );
    assert!(
        (r.cc_total_cps / model.cc_tot_cps - 1.0).abs() < 3.0 / (n.sqrt()),
        "{}",
        r.cc_total_cps
    );
}

#[test]
fn klyshko_recovers_losses() {
    let s = paper_scenario(-107.882, 2.8e5, 3.5e5);
    let t = simulate(&s, &SimulationRun::new(5, 2.0, BasisMode::matched_halves())).unwrap();
    let h = heralding_efficiencies(&t.a, &t.b, 0.0, 200.0, 20_000.0, 2.8e5, 3.5e5, 2.0).unwrap();
    let (eta_a, eta_b) = (10f64.powf(-2.905), 10f64.powf(-2.931));
    assert!(
        (h.eta_a - eta_a).abs() < 3.0 * h.eta_a_sigma(),
        "{} vs {eta_a}",
        h.eta_a
    );
    assert!(
        (h.eta_b - eta_b).abs() < 3.0 * h.eta_b_sigma(),
        "{} vs {eta_b}",
        h.eta_b
    );
}

#[test]
fn hand_computed_key_rate() {
    // 9 correct and 1 erroneous coincidence in 1 s
    let tag = |t: i64, party, outcome| TimeTag {
        timestamp_ps: t,
        party,
        basis: Basis::HV,
        outcome,
    };
    let a: Vec<_> = (0..10).map(|i| tag(i * 10_000, Party::A, 0)).collect();
    let b: Vec<_> = (0..10).map(|i| tag(i * 10_000 + 5, Party::B, (i == 3) as u8)).collect();
    let r = evaluate_window(&a, &b, 0.0, 20.0, 1.0, 1.1).unwrap();
    let h = -(0.1f64 * 0.1f64.log2() + 0.9 * 0.9f64.log2());
    assert_eq!(r.qber, 0.1);
    assert!((r.raw_key_rate - 10.0 * (1.0 - 2.1 * h)).abs() < 1e-12);
    assert_eq!(r.secure_key_rate, secure_key_rate(10.0, 0.1, 1.1).unwrap());
}
