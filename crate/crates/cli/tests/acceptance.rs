//! End-to-end acceptance report. Prints one PASS/FAIL line per criterion
//! with its measured values and runtime.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lls_core::evolution::{
    apply_pulse, evolve_coherent, evolve_dissipative, run_program, EngineSettings, Environment, Observable,
    Relaxation, RelaxationChannel, SpinState,
};
use lls_core::experiments::{
    fit_lifetime, linspace, run_diffusion_experiment, run_lifetime_experiment, stick_spectrum, DiffusionBackend,
    DiffusionMode, DiffusionSettings, DiffusionSetup, LifetimeKind, LifetimeSetup, StickLine, Transition, THERMAL_SIGNAL,
};
use lls_core::fit::fit_gaussian_attenuation;
use lls_core::sample::calibration::{lls_kind_for, recovery_grid, storage_grid};
use lls_core::sample::{calibrate_rates, order_parameter, CalibrationOptions, OrderMap, RateTargets, DEFAULT_D_MAX};
use lls_core::sequence::*;
use lls_core::spin::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GAUSS_PER_CM: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let o = f();
    let dt = t0.elapsed();
    let pass = o.pass && dt <= budget;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "criterion {n} {name}: {} ({}) [{:.2} s, budget {} s]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        dt.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn uniform(rho: &DensityOperator, sys: &SpinSystem) -> SpinState {
    SpinState::uniform(rho, sys.gamma)
}

fn fig3() -> SpinSystem {
    SpinSystem::new(50.0, 10.0, 600.0).unwrap()
}

fn pop() -> SpinSystem {
    SpinSystem::new(46.6, 3.1, 640.0).unwrap()
}

fn ip() -> SpinSystem {
    SpinSystem::new(46.6, 3.1, 0.0).unwrap()
}

fn resonance_and_cpmg() -> Outcome {
    let sys = fig3();
    let r = resonance_params(&sys).unwrap();
    let b = singlet_triplet_basis();
    let z = b.projector(T_ZERO) - b.projector(S_ZERO);
    let relax = Relaxation::None;
    let env = Environment::new(&sys, &relax);
    let out = run_program(
        uniform(&DensityOperator::new(z).unwrap(), &sys),
        &cpmg(r.tau, r.n1, false).unwrap(),
        &env,
        &[],
        &EngineSettings::default(),
    )
    .unwrap();
    let fidelity = (1.0 - expectation(&out.state.mean_density(), &z).unwrap() / 2.0) / 2.0;
    Outcome {
        pass: r.n1 == 19 && r.n2 == 9 && (r.tau - 844.4e-6).abs() <= 0.1e-6 && fidelity >= 0.99,
        detail: format!(
            "n1={} n2={} tau={:.2} us, T0->S0 fidelity {:.4}",
            r.n1,
            r.n2,
            r.tau * 1e6,
            fidelity
        ),
    }
}

fn fig3_trajectory() -> Outcome {
    let sys = fig3();
    let storage = 0.03;
    let prog = m2s_s2m(&sys, Storage::free(storage), &SequenceOptions::default()).unwrap();
    let p = product_operators();
    let zq = (p.i1y * p.i2x - p.i1x * p.i2y).scale(2.0);
    let obs = [
        Observable::new("rho1", fx()),
        Observable::new("rho2", i1y_minus_i2y()),
        Observable::new("rho3", p.i1z - p.i2z),
        Observable::new("rho4", zq),
        Observable::new("rho5", singlet_order()),
        Observable::new("eso", eigen_singlet_order(&sys)),
    ];
    let relax = Relaxation::None;
    let env = Environment::new(&sys, &relax);
    let settings = EngineSettings {
        oversample: 20,
        ..EngineSettings::default()
    };
    let out = run_program(uniform(&thermal_deviation(), &sys), &prog, &env, &obs, &settings).unwrap();
    let tr = &out.trajectory;
    let store_at = prog.events().iter().position(|e| matches!(e, Event::Store { .. })).unwrap();
    // Samples up to the end of storage, in (time, step) order.
    let head: Vec<usize> = (0..tr.len()).filter(|&i| tr.steps[i] <= store_at + 1).collect();
    let first_peak = |k: usize| {
        let max = head.iter().map(|&i| tr.values[i][k].abs()).fold(0.0, f64::max);
        head.iter().copied().find(|&i| tr.values[i][k].abs() >= 0.98 * max).unwrap()
    };
    let peaks: Vec<usize> = (0..5).map(first_peak).collect();
    let ordered = peaks.windows(2).all(|w| w[0] < w[1]);
    let during: Vec<f64> = (0..tr.len())
        .filter(|&i| tr.steps[i] == store_at || tr.steps[i] == store_at + 1)
        .map(|i| tr.values[i][5])
        .collect();
    let spread = during.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v)) - during.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    let final_fx = out.acquired.unwrap()[0];
    // A lossless M2S/S2M pair returns half of the thermal signal.
    let ceiling = THERMAL_SIGNAL / 2.0;
    Outcome {
        pass: ordered && spread < 1e-6 && during.len() > 10 && final_fx >= 0.9 * ceiling,
        detail: format!(
            "peak samples {peaks:?}, stored order spread {spread:.1e} over {} samples, final <Fx> {final_fx:.4} = {:.3} of ceiling",
            during.len(),
            final_fx / ceiling
        ),
    }
}

fn immunity() -> Outcome {
    let mut worst: f64 = 0.0;
    for (j, d, rate) in [(3.1, 640.0, 100.0), (10.0, 0.0, 100.0), (-7.0, 300.0, 37.0)] {
        let sys = SpinSystem::new(0.0, j, d).unwrap();
        let h = hamiltonian(&sys);
        let ch = vec![
            RelaxationChannel::symmetric_dipolar(rate).unwrap(),
            RelaxationChannel::correlated_field(rate).unwrap(),
        ];
        let mut r = DensityOperator::new(singlet_order() + fx().scale(0.3)).unwrap();
        let p0 = r.population(&singlet_state());
        for _ in 0..100 {
            r = evolve_dissipative(&r, &h, &ch, 0.1).unwrap();
            worst = worst.max((r.population(&singlet_state()) - p0).abs());
        }
    }
    let sys = SpinSystem::new(0.0, 3.1, 640.0).unwrap();
    let h = hamiltonian(&sys);
    let ch = vec![
        RelaxationChannel::symmetric_dipolar(50.0).unwrap(),
        RelaxationChannel::uncorrelated_field(0.5).unwrap(),
    ];
    let mut r = DensityOperator::new(singlet_order()).unwrap();
    let mut last = r.population(&singlet_state());
    let mut monotone = true;
    for _ in 0..200 {
        r = evolve_dissipative(&r, &h, &ch, 0.05).unwrap();
        let now = r.population(&singlet_state());
        monotone &= now < last;
        last = now;
    }
    Outcome {
        pass: worst < 1e-8 && monotone,
        detail: format!("symmetric-channel drift {worst:.1e} over 10 s, uncorrelated decay monotone: {monotone}"),
    }
}

fn calibration_closure() -> Outcome {
    let rows = [(294.0, 1.1, 3.7), (296.0, 1.2, 3.9), (297.0, 1.3, 4.3), (298.0, 1.6, 4.6), (305.0, 1.5, 8.1)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (temp, t1, t_lls) in rows {
        let d = order_parameter(temp, &OrderMap::reference()).unwrap() * DEFAULT_D_MAX;
        let sys = pop().with_d(d);
        let opts = CalibrationOptions::default();
        let cal = match calibrate_rates(RateTargets { t1, t_lls }, &sys, &opts) {
            Ok(c) => c,
            Err(e) => {
                pass = false;
                parts.push(format!("{temp} K: {e}"));
                continue;
            }
        };
        let setup = LifetimeSetup::new(sys.clone(), Relaxation::fixed(cal.rates).unwrap());
        let kind = lls_kind_for(&sys);
        let ir = run_lifetime_experiment(LifetimeKind::T1, &recovery_grid(t1, opts.points), &setup).unwrap();
        let got_t1 = fit_lifetime(LifetimeKind::T1, &ir).unwrap().lifetime();
        let lls = run_lifetime_experiment(kind, &storage_grid(t_lls, opts.points), &setup).unwrap();
        let got_lls = fit_lifetime(kind, &lls).unwrap().lifetime();
        let ok = (got_t1 / t1 - 1.0).abs() < 0.02 && (got_lls / t_lls - 1.0).abs() < 0.02;
        pass &= ok;
        parts.push(format!("{temp} K {}: {got_t1:.3}/{got_lls:.3} s", kind.keyword()));
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn transphase_setup() -> LifetimeSetup {
    let row = |sys: &SpinSystem, t1, t_lls| {
        calibrate_rates(RateTargets { t1, t_lls }, sys, &CalibrationOptions::default())
            .unwrap()
            .rates
    };
    let tr = Transition::reference(294.0, 305.0);
    let below = row(&pop().with_d(tr.d_at(294.0)), 1.1, 3.7);
    let above = row(&pop().with_d(tr.d_at(305.0)), 1.5, 8.1);
    let mut setup = LifetimeSetup::new(pop(), Relaxation::per_phase(below, above, tr.t_c).unwrap()).with_transition(tr);
    setup.settings.resolution = 5e-3;
    setup
}

/// STELLAR signal at storage `t`, with the decode gradient scaled by `decode`.
fn stellar_signal(setup: &LifetimeSetup, t: f64, decode: f64) -> f64 {
    let tr = setup.transition.as_ref().unwrap();
    let sys = &setup.sys;
    let p = stellar(
        &sys.with_d(tr.d_at(tr.from)),
        &sys.with_d(tr.d_at(tr.to)),
        setup.options.filter_area(sys.gamma),
        Storage::locked(t, setup.lock),
        &setup.options,
    )
    .unwrap();
    let store_at = p.events().iter().position(|e| matches!(e, Event::Store { .. })).unwrap();
    let start: f64 = p.events()[..store_at].iter().map(Event::duration).sum();
    let last_grad = p.events().iter().rposition(|e| matches!(e, Event::Gradient { .. })).unwrap();
    let events: Vec<Event> = p
        .events()
        .iter()
        .enumerate()
        .map(|(i, e)| match *e {
            Event::Gradient { area, bipolar } if i == last_grad => Event::Gradient {
                area: area * decode,
                bipolar,
            },
            ref e => e.clone(),
        })
        .collect();
    let p = PulseProgram::new("stellar", events).unwrap();
    let schedule = tr.schedule(start, t).unwrap();
    let env = Environment::new(sys, &setup.relaxation).with_schedule(&schedule);
    let obs = [Observable::new("s", LifetimeKind::Transphase.observable())];
    let out = run_program(uniform(&thermal_deviation(), sys), &p, &env, &obs, &setup.settings).unwrap();
    out.acquired.unwrap()[0] / THERMAL_SIGNAL
}

fn transphase() -> Outcome {
    let setup = transphase_setup();
    let s = stellar_signal(&setup, 8.0, 1.0);
    let flipped = stellar_signal(&setup, 8.0, -1.0);
    let suppression = s.abs() / flipped.abs().max(1e-300);
    let grid = linspace(8.0, 24.0, 5);
    let curve = run_lifetime_experiment(LifetimeKind::Transphase, &grid, &setup).unwrap();
    let life = fit_lifetime(LifetimeKind::Transphase, &curve).unwrap().lifetime();
    let (a, b, c) = (s.abs() > 1e-3, suppression >= 1e3, life > 3.7 && life < 8.1 && 6.3 > 3.7 && 6.3 < 8.1);
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    Outcome {
        pass: a && b && c,
        detail: format!(
            "(a) signal {s:.4e} {}, (b) sign-flip suppression {suppression:.3} {}, (c) lifetime {life:.3} s in (3.7, 8.1) {}",
            mark(a),
            mark(b),
            mark(c)
        ),
    }
}

fn diffusion() -> Outcome {
    let steps = |a: f64, da: f64, n: usize| -> Vec<f64> { (0..n).map(|k| (a + da * k as f64) * GAUSS_PER_CM).collect() };
    let sweeps = [
        ("STE", DiffusionMode::Ste, ip(), steps(2.5, 2.5, 19), 3.3, 1.81e-10),
        ("LLS POP", DiffusionMode::Lls, pop(), steps(2.5, 2.5, 19), 10.0, 1.32e-10),
        ("LLS IP", DiffusionMode::Lls, ip(), steps(1.0, 1.0, 20), 30.0, 1.92e-10),
    ];
    let mut worst_z: f64 = 0.0;
    let mut fits = Vec::new();
    let mut pass = true;
    for (k, (name, mode, sys, g, big_delta, d)) in sweeps.into_iter().enumerate() {
        let settings = DiffusionSettings::new(320e-6, big_delta).unwrap();
        let mut mc = DiffusionSetup::new(sys.clone(), settings, DiffusionBackend::MonteCarlo { slices: 10_000 });
        mc.seed = 1000 + k as u64;
        let curve = run_diffusion_experiment(mode, &g, d, &mc).unwrap();
        let sigma = curve.sigma.clone().unwrap();
        for i in 0..g.len() {
            worst_z = worst_z.max(((curve.signal[i] - settings.attenuation(d, g[i])) / sigma[i]).abs());
        }
        let exact = DiffusionSetup::new(sys, settings, DiffusionBackend::Analytic);
        let synth = run_diffusion_experiment(mode, &g, d, &exact)
            .unwrap()
            .with_noise(0.005, 2000 + k as u64)
            .unwrap();
        let b: Vec<f64> = g.iter().map(|x| settings.b_value(*x)).collect();
        let fit = fit_gaussian_attenuation(&b, &synth.signal).unwrap();
        let err = (fit.d / d - 1.0).abs();
        pass &= err < 0.03;
        fits.push(format!("{name} {:.3}e-10", fit.d * 1e10));
    }
    pass &= worst_z < 3.0;
    Outcome {
        pass,
        detail: format!("worst |z| {worst_z:.2} at N_z = 1e4; fitted D {}", fits.join(", ")),
    }
}

fn lines(rho: &DensityOperator, sys: &SpinSystem, thr: f64) -> Vec<StickLine> {
    let mut l = stick_spectrum(rho, &hamiltonian(sys)).unwrap().significant(thr);
    l.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    l
}

fn spectra() -> Outcome {
    let x = apply_pulse(&thermal_deviation(), PI / 2.0, PI / 2.0);
    // Weak coupling: positions against eigenvalue differences and first-order
    // positions.
    let weak = SpinSystem::new(46.6, 0.5, 0.0).unwrap();
    let l = lines(&x, &weak, 1e-9);
    let (vals, _) = eigh(&hamiltonian(&weak));
    let mut oracle: Vec<f64> = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            let f = (vals[a] - vals[b]) / (2.0 * PI);
            if f.abs() > 1.0 && f.abs() < 40.0 {
                oracle.push(f);
            }
        }
    }
    let near = |f: f64, set: &[f64]| set.iter().map(|o| (o - f).abs()).fold(f64::INFINITY, f64::min);
    let first_order: Vec<f64> = [-1.0, 1.0]
        .iter()
        .flat_map(|s| [-1.0, 1.0].map(move |t| s * 46.6 / 2.0 + t * 0.5 / 2.0))
        .collect();
    let worst_weak = l
        .iter()
        .map(|li| near(li.frequency, &oracle).max(near(li.frequency.abs(), &first_order.iter().map(|f| f.abs()).collect::<Vec<_>>())))
        .fold(0.0, f64::max);
    let weak_ok = l.len() == 4 && worst_weak < 0.01;

    let strong = lines(&x, &pop(), 1e-9);
    let mut by_amp = strong.clone();
    by_amp.sort_by(|a, b| b.amplitude.abs().total_cmp(&a.amplitude.abs()));
    let outer: f64 = by_amp[..2].iter().map(|l| l.amplitude).sum();
    let inner: f64 = by_amp[2..].iter().map(|l| l.amplitude.abs()).sum();
    let outer_ok = strong.len() == 4
        && outer > 0.99 * THERMAL_SIGNAL
        && by_amp[2..].iter().all(|l| l.frequency.abs() < by_amp[0].frequency.abs());

    let read = apply_pulse(&DensityOperator::new(eigen_singlet_order(&pop())).unwrap(), PI / 2.0, PI / 2.0);
    let s = lines(&read, &pop(), 1e-6);
    let gaps: Vec<f64> = s.windows(2).map(|w| w[1].frequency - w[0].frequency).collect();
    let spread = gaps.iter().fold(0.0f64, |a, g| a.max(*g)) / gaps.iter().fold(f64::INFINITY, |a, g| a.min(*g));
    let singlet_ok = s.len() == 4 && spread < 1.02;
    Outcome {
        pass: weak_ok && outer_ok && singlet_ok,
        detail: format!(
            "weak-coupling worst offset {worst_weak:.4} Hz, strong-coupling outer {outer:.4} vs inner {inner:.4}, singlet readout gaps {:?} Hz",
            gaps.iter().map(|g| (g * 10.0).round() / 10.0).collect::<Vec<_>>()
        ),
    }
}

fn random_event(rng: &mut ChaCha8Rng) -> Event {
    let lock = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { LockMode::Ideal } else { LockMode::Waltz16 };
    let t = |rng: &mut ChaCha8Rng| match rng.random_range(0..3) {
        0 => rng.random_range(0.0..1.0),
        1 => 10f64.powi(rng.random_range(-9..2)) * 1.2345678901234,
        _ => 0.0,
    };
    match rng.random_range(0..6) {
        0 => Event::pulse(
            rng.random_range(-720.0..720.0),
            [0.0, 90.0, 180.0, 270.0, rng.random_range(-360.0..360.0)][rng.random_range(0..5)],
        ),
        1 => Event::Delay { t: t(rng) },
        2 => Event::Cpmg {
            tau: rng.random_range(1e-6..1e-2),
            n: rng.random_range(1..40),
            composite: rng.random_bool(0.5),
        },
        3 => Event::Gradient {
            area: rng.random_range(-1e-2..1e-2),
            bipolar: rng.random_bool(0.5),
        },
        4 => Event::Lock {
            mode: lock(rng),
            t: t(rng),
        },
        _ => Event::Store {
            t: t(rng),
            lock: if rng.random_bool(0.5) { Some(lock(rng)) } else { None },
        },
    }
}

fn run_cli(dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let cfg = dir.join("mc.ini");
    std::fs::write(
        &cfg,
        "[system]\nomega_hz = 46.6\nj_hz = 3.1\nd_hz = 640\n\n[experiment]\nkind = diffusion-lls\n\
         grid = 2.5, 10, 20, 30, 47.5\ngrid_unit = gauss_per_cm\nd_true = 1.32e-10\nbig_delta_s = 10\n\
         backend = monte-carlo\nslices = 3000\nseed = 11\n\n[output]\nformats = csv,svg\n",
    )
    .unwrap();
    let out = dir.join(format!("out-{threads}"));
    let st = Command::new(env!("CARGO_BIN_EXE_lls"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads])
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let start = apply_pulse(&thermal_deviation(), 0.7, 0.3);
    let eig0 = eigh(start.operator()).0;
    let purity = |r: &DensityOperator| r.operator().inner(r.operator()).re;
    let p0 = purity(&start);
    let mut rho = start;
    for _ in 0..10_000 {
        let sys = SpinSystem::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-800.0..800.0),
        )
        .unwrap();
        rho = evolve_coherent(&rho, &hamiltonian(&sys), rng.random_range(0.0..2e-3)).unwrap();
    }
    let drift = [
        rho.operator().trace().norm(),
        rho.operator().hermitian_deviation(),
        (purity(&rho) - p0).abs(),
        eigh(rho.operator()).0.iter().zip(&eig0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let mut corpus: Vec<PulseProgram> = Vec::new();
    let (s1, s2) = (fig3(), ip());
    let opts = SequenceOptions::default();
    corpus.push(m2s(&s1).unwrap());
    corpus.push(s2m(&s1).unwrap());
    corpus.push(m2s_s2m(&s1, Storage::free(0.03), &opts).unwrap());
    corpus.push(cl_cl(&s2, Storage::locked(1.0, LockMode::Waltz16)).unwrap());
    corpus.push(stellar(&pop(), &s2, opts.filter_area(s2.gamma), Storage::locked(2.0, LockMode::Ideal), &opts).unwrap());
    corpus.push(PulseProgram::new("", vec![]).unwrap());
    while corpus.len() < 50 {
        let n = rng.random_range(0..30);
        let mut ev: Vec<Event> = (0..n).map(|_| random_event(&mut rng)).collect();
        if rng.random_bool(0.5) {
            ev.push(Event::Acquire);
        }
        corpus.push(PulseProgram::new(format!("p{}", corpus.len()), ev).unwrap());
    }
    let round_trips = corpus
        .iter()
        .filter(|p| {
            let text = serialize(p);
            parse_program(&text).map(|q| &q == *p && serialize(&q) == text).unwrap_or(false)
        })
        .count();

    let dir = tempfile::TempDir::new().unwrap();
    let n = std::thread::available_parallelism().map_or(4, |n| n.get().max(2)).to_string();
    let one = run_cli(dir.path(), "1");
    let many = run_cli(dir.path(), &n);
    let identical = one == many && !one.is_empty();
    Outcome {
        pass: drift < 1e-10 && round_trips == corpus.len() && identical,
        detail: format!(
            "max drift {drift:.1e} over 1e4 steps, {round_trips}/{} programs round-trip, {} output files identical at 1 and {n} threads: {identical}",
            corpus.len(),
            one.len()
        ),
    }
}

#[test]
fn acceptance() {
    let s = Duration::from_secs;
    let results = [
        report(1, "resonance conditions and CPMG inversion", s(1), resonance_and_cpmg),
        report(2, "M2S-storage-S2M trajectory", s(10), fig3_trajectory),
        report(3, "singlet immunity", s(60), immunity),
        report(4, "calibration closure, five rows", s(120), calibration_closure),
        report(5, "trans-phase survival", s(120), transphase),
        report(6, "diffusion oracle equivalence", s(60), diffusion),
        report(7, "spectral structure", s(1), spectra),
        report(8, "engine invariants and determinism", s(120), invariants),
    ];
    let passed = results.iter().filter(|p| **p).count();
    let _ = writeln!(std::io::stdout().lock(), "acceptance: {passed}/{} criteria pass", results.len());
}
