use lls_core::evolution::{apply_pulse, ChannelRates, Relaxation};
use lls_core::experiments::*;
use lls_core::fit::*;
use lls_core::sequence::resonance_params;
use lls_core::sample::{calibrate_rates, CalibrationOptions, RateTargets};
use lls_core::spin::*;
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_2;

const GAUSS_PER_CM: f64 = 0.01;

fn decay(t: &[f64], a: f64, life: f64) -> Vec<f64> {
    t.iter().map(|x| a * (-x / life).exp()).collect()
}

fn fx_state() -> DensityOperator {
    apply_pulse(&thermal_deviation(), FRAC_PI_2, FRAC_PI_2)
}

#[test]
fn noisy_decay_fits() {
    let t = linspace(0.0, 30.0, 12);
    for (life, seed) in [(8.1, 3), (6.3, 11)] {
        let c = ExperimentCurve::new("x", "t", t.clone(), decay(&t, 1.0, life))
            .unwrap()
            .with_noise(0.01, seed)
            .unwrap();
        let f = fit_monoexponential(&c.control, &c.signal).unwrap();
        assert!((f.lifetime / life - 1.0).abs() < 0.02, "{life}: {}", f.lifetime);
        assert!(f.lifetime_stderr > 0.0);
    }
}

#[test]
fn noisy_recovery_fits() {
    let t = linspace(0.0, 8.0, 16);
    for (t1, seed) in [(1.5, 1), (1.1, 2)] {
        let s: Vec<f64> = t.iter().map(|x| 2.0 * (1.0 - 2.0 * (-x / t1).exp())).collect();
        let c = ExperimentCurve::new("t1", "t", t.clone(), s).unwrap().with_noise(0.02, seed).unwrap();
        let f = fit_inversion_recovery(&c.control, &c.signal).unwrap();
        assert!((f.t1 / t1 - 1.0).abs() < 0.02, "{t1}: {}", f.t1);
        assert!((f.m0 - 2.0).abs() < 0.05);
    }
}

#[test]
fn noisy_short_decay_fits() {
    let t = linspace(0.0, 11.0, 12);
    let c = ExperimentCurve::new("x", "t", t.clone(), decay(&t, 1.0, 3.7)).unwrap().with_noise(0.01, 5).unwrap();
    let f = fit_monoexponential(&c.control, &c.signal).unwrap();
    assert!((f.lifetime / 3.7 - 1.0).abs() < 0.02, "{}", f.lifetime);
}

#[test]
fn two_point_fit_is_exact() {
    let f = fit_monoexponential(&[0.0, 2.0], &decay(&[0.0, 2.0], 1.7, 4.2)).unwrap();
    assert!((f.lifetime - 4.2).abs() < 1e-9);
    assert!((f.amplitude - 1.7).abs() < 1e-9);
}

#[test]
fn fit_rejects_bad_input() {
    assert!(fit_monoexponential(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]).is_err());
    assert!(fit_monoexponential(&[0.0], &[1.0]).is_err());
    assert!(fit_monoexponential(&[0.0, 1.0], &[1.0]).is_err());
    assert!(ExperimentCurve::new("x", "t", vec![], vec![]).is_err());
    assert!(ExperimentCurve::new("x", "t", vec![1.0, 0.5], vec![1.0, 1.0]).is_err());
}

proptest! {
    #[test]
    fn fit_is_scale_equivariant(life in 0.5..20.0f64, a in 0.1..10.0f64, s in 0.1..10.0f64, c in 0.1..10.0f64) {
        let t = linspace(0.0, 3.0 * life, 9);
        let y = decay(&t, a, life);
        let base = fit_monoexponential(&t, &y).unwrap();
        let ts: Vec<f64> = t.iter().map(|x| x * s).collect();
        let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
        let scaled = fit_monoexponential(&ts, &ys).unwrap();
        prop_assert!((scaled.lifetime / (s * base.lifetime) - 1.0).abs() < 1e-9);
        prop_assert!((scaled.amplitude / (c * base.amplitude) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn one_pulse_sum_rule(w in -200.0..200.0f64, j in -20.0..20.0f64, d in -1000.0..1000.0f64) {
        prop_assume!(w.abs() > 1e-3);
        let sys = SpinSystem::new(w, j, d).unwrap();
        let sp = stick_spectrum(&fx_state(), &hamiltonian(&sys)).unwrap();
        prop_assert!((sp.total_abs_amplitude() - THERMAL_SIGNAL).abs() < 1e-9);
        let sum: f64 = sp.lines.iter().map(|l| l.amplitude).sum();
        prop_assert!((sum - THERMAL_SIGNAL).abs() < 1e-9);
    }
}

#[test]
fn ab_quartet_positions() {
    let (w, j) = (46.6, 3.1);
    let sys = SpinSystem::new(w, j, 0.0).unwrap();
    let mut lines = stick_spectrum(&fx_state(), &hamiltonian(&sys)).unwrap().significant(1e-9);
    lines.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    assert_eq!(lines.len(), 4);
    let c = w.hypot(j);
    let want = [-(c + j) / 2.0, -(c - j) / 2.0, (c - j) / 2.0, (c + j) / 2.0];
    for (l, f) in lines.iter().zip(want) {
        assert!((l.frequency.abs() - f.abs()).abs() < 1e-9, "{} vs {f}", l.frequency);
    }
    let weak = SpinSystem::new(46.6, 0.1, 0.0).unwrap();
    let mut lines = stick_spectrum(&fx_state(), &hamiltonian(&weak)).unwrap().significant(1e-9);
    lines.sort_by(|a, b| a.frequency.abs().total_cmp(&b.frequency.abs()));
    for (pair, f) in lines.chunks(2).zip([(46.6 - 0.1) / 2.0, (46.6 + 0.1) / 2.0]) {
        for l in pair {
            assert!((l.frequency.abs() - f).abs() < 0.01);
        }
    }
}

#[test]
fn strong_dipolar_coupling_favours_outer_lines() {
    let sys = SpinSystem::new(46.6, 3.1, 640.0).unwrap();
    let mut lines = stick_spectrum(&fx_state(), &hamiltonian(&sys)).unwrap().significant(1e-9);
    lines.sort_by(|a, b| b.amplitude.abs().total_cmp(&a.amplitude.abs()));
    assert_eq!(lines.len(), 4);
    let outer: f64 = lines[..2].iter().map(|l| l.amplitude).sum();
    let inner: f64 = lines[2..].iter().map(|l| l.amplitude).sum();
    assert!(outer > 0.99 * THERMAL_SIGNAL);
    assert!(inner < 0.01);
    let fo = lines[0].frequency.abs();
    assert!(lines[2..].iter().all(|l| l.frequency.abs() < fo));
}

#[test]
fn singlet_readout_gives_evenly_spaced_lines() {
    let sys = SpinSystem::new(46.6, 3.1, 640.0).unwrap();
    let rho = DensityOperator::new(eigen_singlet_order(&sys)).unwrap();
    let read = apply_pulse(&rho, FRAC_PI_2, FRAC_PI_2);
    let mut lines = stick_spectrum(&read, &hamiltonian(&sys)).unwrap().significant(1e-6);
    lines.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    assert_eq!(lines.len(), 4);
    let gaps: Vec<f64> = lines.windows(2).map(|w| w[1].frequency - w[0].frequency).collect();
    let (lo, hi) = gaps.iter().fold((f64::MAX, 0.0f64), |(a, b), g| (a.min(*g), b.max(*g)));
    assert!(hi / lo < 1.02, "{gaps:?}");
    let signs: Vec<f64> = lines.iter().map(|l| l.amplitude.signum()).collect();
    assert!(signs.windows(2).all(|w| w[0] != w[1]), "{signs:?}");
    let net: f64 = lines.iter().map(|l| l.amplitude).sum();
    assert!(net.abs() < 1e-9);
}

fn pop_settings() -> DiffusionSettings {
    DiffusionSettings::new(320e-6, 10.0).unwrap()
}

#[test]
fn analytic_diffusion_is_stejskal_tanner() {
    let sys = SpinSystem::new(46.6, 3.1, 640.0).unwrap();
    let s = pop_settings();
    let setup = DiffusionSetup::new(sys, s, DiffusionBackend::Analytic);
    let g: Vec<f64> = linspace(0.0, 47.5, 8).iter().map(|x| x * GAUSS_PER_CM).collect();
    let d = 1.32e-10;
    for mode in [DiffusionMode::Ste, DiffusionMode::Lls] {
        let c = run_diffusion_experiment(mode, &g, d, &setup).unwrap();
        assert_eq!(c.signal[0], 1.0);
        for (gi, si) in g.iter().zip(&c.signal) {
            assert!((si - s.attenuation(d, *gi)).abs() < 1e-9, "{mode:?} {gi}");
        }
    }
}

#[test]
fn diffusion_coefficient_recovered_from_pop_sweep() {
    let sys = SpinSystem::new(46.6, 3.1, 640.0).unwrap();
    let s = pop_settings();
    let setup = DiffusionSetup::new(sys, s, DiffusionBackend::Analytic);
    let g: Vec<f64> = (0..19).map(|k| (2.5 + 2.5 * k as f64) * GAUSS_PER_CM).collect();
    let b: Vec<f64> = g.iter().map(|x| s.b_value(*x)).collect();
    let c = run_diffusion_experiment(DiffusionMode::Lls, &g, 1.32e-10, &setup)
        .unwrap()
        .with_noise(0.005, 17)
        .unwrap();
    let f = fit_gaussian_attenuation(&b, &c.signal).unwrap();
    assert!((f.d / 1.32e-10 - 1.0).abs() < 0.03, "{}", f.d);
    let still = run_diffusion_experiment(DiffusionMode::Lls, &g, 0.0, &setup).unwrap();
    let f0 = fit_gaussian_attenuation(&b, &still.signal).unwrap();
    assert!(f0.flat && f0.d == 0.0);
}

#[test]
fn monte_carlo_diffusion_within_three_sigma() {
    let sys = SpinSystem::new(46.6, 3.1, 640.0).unwrap();
    let s = DiffusionSettings::new(320e-6, 3.3).unwrap();
    let mut setup = DiffusionSetup::new(sys, s, DiffusionBackend::MonteCarlo { slices: 2000 });
    setup.seed = 9;
    let g: Vec<f64> = [5.0, 20.0, 40.0].iter().map(|x| x * GAUSS_PER_CM).collect();
    let d = 1.81e-10;
    let c = run_diffusion_experiment(DiffusionMode::Ste, &g, d, &setup).unwrap();
    let sigma = c.sigma.clone().unwrap();
    for k in 0..g.len() {
        let z = (c.signal[k] - s.attenuation(d, g[k])) / sigma[k];
        assert!(z.abs() < 3.0, "G = {}: z = {z}", g[k]);
    }
    let again = run_diffusion_experiment(DiffusionMode::Ste, &g, d, &setup).unwrap();
    assert_eq!(c.signal, again.signal);
}

#[test]
fn diffusion_rejects_bad_input() {
    let sys = SpinSystem::new(46.6, 3.1, 640.0).unwrap();
    let setup = DiffusionSetup::new(sys, pop_settings(), DiffusionBackend::Analytic);
    assert!(run_diffusion_experiment(DiffusionMode::Ste, &[], 1e-10, &setup).is_err());
    assert!(run_diffusion_experiment(DiffusionMode::Ste, &[-0.1], 1e-10, &setup).is_err());
    assert!(run_diffusion_experiment(DiffusionMode::Ste, &[0.1], -1e-10, &setup).is_err());
    assert!(DiffusionSettings::new(320e-6, 0.0).is_err());
}

#[test]
fn singlet_curve_is_flat_without_relaxation() {
    let sys = SpinSystem::new(46.6, 3.1, 640.0).unwrap();
    // Storage steps are whole periods of the residual T0/S0 coherence.
    let period = 1.0 / resonance_params(&sys).unwrap().nu_eff;
    let step = (5.0 / period).round() * period;
    let grid: Vec<f64> = (0..5).map(|k| k as f64 * step).collect();
    let setup = LifetimeSetup::new(sys, Relaxation::None);
    let c = run_lifetime_experiment(LifetimeKind::LlsPop, &grid, &setup).unwrap();
    let n = grid.len() as f64;
    let (mt, ms) = (grid.iter().sum::<f64>() / n, c.signal.iter().sum::<f64>() / n);
    let sxy: f64 = grid.iter().zip(&c.signal).map(|(t, s)| (t - mt) * (s - ms)).sum();
    let sxx: f64 = grid.iter().map(|t| (t - mt).powi(2)).sum();
    assert!((sxy / sxx).abs() < 1e-6, "{:?}", c.signal);
    assert!(c.signal[0] > 0.4);
}

#[test]
fn calibrated_rates_close_the_loop() {
    let sys = SpinSystem::new(46.6, 3.1, 640.0).unwrap();
    let cal = calibrate_rates(RateTargets { t1: 1.1, t_lls: 3.7 }, &sys, &CalibrationOptions::default()).unwrap();
    let setup = LifetimeSetup::new(sys, Relaxation::fixed(cal.rates).unwrap());
    let lls = run_lifetime_experiment(LifetimeKind::LlsPop, &linspace(0.0, 3.0 * 3.7, 10), &setup).unwrap();
    let t_lls = fit_lifetime(LifetimeKind::LlsPop, &lls).unwrap().lifetime();
    assert!((t_lls / 3.7 - 1.0).abs() < 0.02, "{t_lls}");
    let ir = run_lifetime_experiment(LifetimeKind::T1, &linspace(0.0, 5.0 * 1.1, 10), &setup).unwrap();
    let t1 = fit_lifetime(LifetimeKind::T1, &ir).unwrap().lifetime();
    assert!((t1 / 1.1 - 1.0).abs() < 0.02, "{t1}");
    assert!(t_lls >= t1);
}

#[test]
fn longitudinal_relaxation_matches_uncorrelated_rate() {
    let sys = SpinSystem::new(46.6, 3.1, 640.0).unwrap();
    let rates = ChannelRates { dipolar: 0.0, uncorrelated: 0.5 };
    let setup = LifetimeSetup::new(sys, Relaxation::fixed(rates).unwrap());
    let ir = run_lifetime_experiment(LifetimeKind::T1, &linspace(0.0, 10.0, 12), &setup).unwrap();
    let t1 = fit_lifetime(LifetimeKind::T1, &ir).unwrap().lifetime();
    assert!((t1 - 2.0).abs() < 0.02, "{t1}");
}
