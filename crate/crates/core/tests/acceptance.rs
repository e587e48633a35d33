//! Acceptance checks on the bundled unbalanced 9-bus system. One PASS or
//! FAIL line per criterion. The exit status only reflects crashes, so a
//! red criterion is reported without failing the rest of the test suite.

use std::convert::Infallible;
use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emt_init::emt::{StateHistory, StepOptions, System, TrajectoryRecord};
use emt_init::guess::{init_induction_machine, init_sync_machine, power_flow, PowerFlowOptions};
use emt_init::netlist::{parse_system, SystemSpec, WSCC9_UNBALANCED};
use emt_init::phasor::{balanced_set, fit_phasor, instantaneous, positive_sequence, WaveRecord};
use emt_init::pipeline::{initialize, simulate, InitConfig, InitOutcome};
use emt_init::shooting::{StateTag, Unknown};
use emt_init::solver::{gmres_inner, Preconditioning, SecantKind, SolverOptions};

// criterion 1
const MAX_NEWTON: usize = 5;
const REFERENCE_F0: f64 = 0.3516;
const F0_FACTOR: f64 = 10.0;
const FIRST_REDUCTION: f64 = 1e-2;
const MAX_SECONDS: f64 = 60.0;
// criterion 2
const EVAL_RATIO: f64 = 0.9;
/// "Far below" the finite-difference Jacobian floor, as a fraction of it.
const FLOOR_FRACTION: f64 = 0.6;
// criterion 3
const SIM_STEP: f64 = 250e-6;
const SIM_PERIODS: usize = 5;
const MAX_DRIFT: f64 = 1e-4;
const DRIFT_FLOOR: f64 = 1e-3;
const MIN_RIPPLE_UNBALANCED: f64 = 1e-5;
const MAX_RIPPLE_BALANCED: f64 = 1e-8;
// criterion 4
const OPERATING_POINT_TOL: f64 = 1e-5;
// criterion 5
const GMRES_TOL: f64 = 1e-8;
const IDENTITY_TOL: f64 = 1e-12;
const SECANT_TOL: f64 = 1e-10;
// criterion 6
const FIT_TOL: f64 = 1e-13;
const RANDOM_CASES: usize = 1000;
const IDENTITY_CASE_TOL: f64 = 1e-12;
// criterion 7
const MAX_MACHINE_DERIVATIVE: f64 = 1e-8;
const MAX_BALANCED_NEWTON: usize = 2;

struct Line {
    id: usize,
    pass: bool,
    detail: String,
}

fn spec(k: f64) -> SystemSpec {
    let mut s = parse_system(WSCC9_UNBALANCED).expect("bundled system");
    s.set_unbalance(k).expect("k in range");
    s
}

fn run(k: f64, precondition: Preconditioning) -> (InitOutcome, f64) {
    let spec = spec(k);
    let mut solver = spec.solver.clone();
    solver.precondition = precondition;
    let cfg = InitConfig {
        steps_per_period: Some(25),
        solver: Some(solver),
        ..InitConfig::default()
    };
    let start = Instant::now();
    let out = initialize(&spec, &cfg).expect("initialization runs");
    (out, start.elapsed().as_secs_f64())
}

/// RMS phasor of the fundamental by direct DFT over one full period.
fn dft_phasor(samples: &[f64], t: impl Fn(usize) -> f64, omega: f64) -> Complex64 {
    let n = samples.len() as f64;
    let sum: Complex64 = samples
        .iter()
        .enumerate()
        .map(|(k, x)| x * Complex64::from_polar(1.0, -omega * t(k)))
        .sum();
    sum * (2f64.sqrt() / n)
}

/// Peak amplitude of harmonic `h` over the last full period.
fn dft_amplitude(hist: &StateHistory, index: usize, omega: f64, h: usize) -> f64 {
    let n = hist.steps_per_period;
    let end = hist.x.len() - 1;
    let start = end - n;
    let sum: Complex64 = (start..end)
        .map(|k| hist.x[k][index] * Complex64::from_polar(1.0, -(h as f64) * omega * hist.t[k]))
        .sum();
    2.0 * sum.norm() / n as f64
}

fn boundary_changes(hist: &StateHistory, index: usize) -> Vec<f64> {
    let b: Vec<f64> = hist
        .x
        .iter()
        .step_by(hist.steps_per_period)
        .map(|x| x[index])
        .collect();
    b.windows(2).map(|w| w[1] - w[0]).collect()
}

fn criterion_1(pre: &InitOutcome, seconds: f64) -> Line {
    let s = &pre.stats;
    let norms = &s.residual_norms;
    let decreasing = norms.windows(2).all(|w| w[1] < w[0]);
    let f0 = norms[0];
    let f0_ok = (REFERENCE_F0 / F0_FACTOR..=REFERENCE_F0 * F0_FACTOR).contains(&f0);
    let first = norms.get(1).map_or(f64::INFINITY, |f1| f1 / f0);
    let pass = s.converged
        && s.iterations() <= MAX_NEWTON
        && decreasing
        && f0_ok
        && first <= FIRST_REDUCTION
        && seconds < MAX_SECONDS;
    let trace: Vec<String> = norms.iter().map(|n| format!("{n:.3e}")).collect();
    Line {
        id: 1,
        pass,
        detail: format!(
            "norms [{}], {} iterations, first reduction {first:.1e}, {seconds:.1} s",
            trace.join(" -> "),
            s.iterations()
        ),
    }
}

fn criterion_2(pre: &InitOutcome, off: &InitOutcome) -> Line {
    let floor = pre.x.len() + 2;
    let (a, b) = (pre.stats.f_evals, off.stats.f_evals);
    let ratio = a as f64 / b as f64;
    let limit = FLOOR_FRACTION * floor as f64;
    let pass = pre.stats.converged
        && off.stats.converged
        && a < b
        && ratio <= EVAL_RATIO
        && (a as f64) <= limit
        && (b as f64) <= limit;
    Line {
        id: 2,
        pass,
        detail: format!(
            "F evals {a} preconditioned vs {b} plain (ratio {ratio:.2}); floor dim + 2 = {floor}, limit {limit:.0}"
        ),
    }
}

fn free_run(k: f64) -> (InitOutcome, System, StateHistory) {
    let (out, _) = run(k, Preconditioning::Broyden);
    let spec = spec(k);
    let (sys, hist) = simulate(
        &spec,
        &out.state,
        SIM_STEP,
        SIM_PERIODS,
        StepOptions::default(),
    )
    .expect("free run");
    (out, sys, hist)
}

fn criterion_3(
    unbalanced: &(InitOutcome, System, StateHistory),
    balanced: &(InitOutcome, System, StateHistory),
) -> Line {
    let (out, sys, hist) = unbalanced;
    let names = sys.state_names();
    let mut worst = (0.0, String::new());
    for e in &out.problem.layout.entries {
        if let Unknown::State {
            index,
            tag: StateTag::Periodic,
        } = e
        {
            let peak = hist.x.iter().fold(0.0_f64, |m, x| m.max(x[*index].abs()));
            let change = boundary_changes(hist, *index)
                .iter()
                .fold(0.0_f64, |m, d| m.max(d.abs()));
            let rel = change / peak.max(DRIFT_FLOOR);
            if rel > worst.0 {
                worst = (rel, names[*index].clone());
            }
        }
    }
    let speed = sys.state_index("G2.speed").expect("G2 speed");
    let ripple = dft_amplitude(hist, speed, sys.omega_b, 2);
    let (_, bsys, bhist) = balanced;
    let balanced_ripple = dft_amplitude(
        bhist,
        bsys.state_index("G2.speed").unwrap(),
        bsys.omega_b,
        2,
    );
    let angle = boundary_changes(
        hist,
        sys.state_index("M5.rotor_angle").expect("motor angle"),
    );
    let monotone = angle.iter().all(|d| *d < 0.0) || angle.iter().all(|d| *d > 0.0);
    let pass = worst.0 < MAX_DRIFT
        && ripple > MIN_RIPPLE_UNBALANCED
        && balanced_ripple < MAX_RIPPLE_BALANCED
        && monotone;
    Line {
        id: 3,
        pass,
        detail: format!(
            "{} steps/period; worst drift {:.2e} ({}); G2 speed 2nd harmonic {ripple:.3e} at k = 0.1, {balanced_ripple:.1e} at k = 0; motor angle {:+.4} rad/period, monotone {monotone}",
            sys.steps, worst.0, worst.1, angle[0]
        ),
    }
}

/// Phase voltage and current phasors of a device over the trajectory.
fn device_phasors(
    traj: &TrajectoryRecord,
    id: &str,
    omega: f64,
) -> ([Complex64; 3], [Complex64; 3]) {
    let w = traj.device(id).expect("device recorded");
    let t = |k: usize| traj.t0 + (k + 1) as f64 * traj.h;
    let v = [0, 1, 2].map(|ph| dft_phasor(&w.v[ph], t, omega));
    let i = [0, 1, 2].map(|ph| dft_phasor(&w.i[ph], t, omega));
    (v, i)
}

fn seq_positive(x: &[Complex64; 3]) -> Complex64 {
    let a = Complex64::new(-0.5, 3f64.sqrt() / 2.0);
    (x[0] + a * x[1] + a * a * x[2]) / 3.0
}

fn criterion_4(out: &InitOutcome) -> Line {
    let traj = out.problem.trajectory(&out.x).expect("trajectory");
    let omega = out.problem.system.omega_b;
    let mut worst = 0.0_f64;
    let mut notes = Vec::new();
    // PV units: P 1.63 / 0.85 at |V+| 1.025
    for (id, p, v) in [("G2", 1.63, 1.025), ("G3", 0.85, 1.025)] {
        let (vs, is) = device_phasors(&traj, id, omega);
        let (vp, ip) = (seq_positive(&vs), seq_positive(&is));
        let s = vp * ip.conj();
        let e = (vp.norm() - v).abs().max((s.re - p).abs());
        notes.push(format!("{id} {e:.1e}"));
        worst = worst.max(e);
    }
    let (vs, is) = device_phasors(&traj, "M5", omega);
    let e = ((seq_positive(&vs) * seq_positive(&is).conj()).re - 1.25).abs();
    notes.push(format!("M5 {e:.1e}"));
    worst = worst.max(e);
    // constant-power phase shares (1-k)S/3, S/3, (1+k)S/3 at k = 0.1
    let shares = [
        ("L6", [(0.27, 0.09), (0.30, 0.10), (0.33, 0.11)]),
        (
            "L8",
            [
                (0.30, 0.105),
                (1.0 / 3.0, 0.35 / 3.0),
                (1.1 / 3.0, 0.385 / 3.0),
            ],
        ),
    ];
    for (id, targets) in shares {
        let (vs, is) = device_phasors(&traj, id, omega);
        let mut e = 0.0_f64;
        for (ph, (p, q)) in targets.iter().enumerate() {
            let s = vs[ph] * is[ph].conj() / 3.0;
            e = e.max((s.re - p).abs()).max((s.im - q).abs());
        }
        notes.push(format!("{id} {e:.1e}"));
        worst = worst.max(e);
    }
    Line {
        id: 4,
        pass: worst < OPERATING_POINT_TOL,
        detail: format!("worst mismatch {worst:.2e} ({})", notes.join(", ")),
    }
}

fn gmres_error(n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let a = DMatrix::from_fn(n, n, |i, j| {
        let r: f64 = rng.gen_range(-1.0..1.0);
        if i == j {
            4.0 + r
        } else {
            r / n as f64
        }
    });
    let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let exact = a.clone().lu().solve(&b).expect("regular");
    let mut f = |x: &DVector<f64>| -> Result<DVector<f64>, Infallible> { Ok(&a * x - &b) };
    let x0 = DVector::zeros(n);
    let opts = SolverOptions {
        tolerance: 1e-14,
        reltol: 1e-14,
        precondition: Preconditioning::Off,
        ..SolverOptions::default()
    };
    let out = gmres_inner(&mut f, &x0, &(-&b), &opts, None, 0).unwrap_or_else(|_| panic!("gmres"));
    (out.dx - &exact).amax() / exact.amax()
}

fn criterion_5(pre: &InitOutcome) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e20 = gmres_error(20, &mut rng);
    let e50 = gmres_error(50, &mut rng);
    let (off, _) = run(0.1, Preconditioning::Off);
    let (id, _) = run(0.1, Preconditioning::Identity);
    let path_gap = (&off.x - &id.x).amax().max(
        off.stats
            .residual_norms
            .iter()
            .zip(&id.stats.residual_norms)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())),
    );
    let same_length = off.stats.residual_norms.len() == id.stats.residual_norms.len();
    let checks = &pre.stats.secant_checks;
    let applied = |kind: SecantKind| {
        checks
            .iter()
            .filter(|c| c.kind == kind && c.rel_error.is_some())
            .count()
    };
    let worst_secant = checks
        .iter()
        .filter_map(|c| c.rel_error)
        .fold(0.0_f64, f64::max);
    let (outer, inner) = (applied(SecantKind::Outer), applied(SecantKind::Inner));
    let pass = e20 < GMRES_TOL
        && e50 < GMRES_TOL
        && same_length
        && path_gap < IDENTITY_TOL
        && outer > 0
        && inner > 0
        && worst_secant < SECANT_TOL;
    Line {
        id: 5,
        pass,
        detail: format!(
            "gmres vs dense {e20:.1e} (n = 20), {e50:.1e} (n = 50); off vs identity {path_gap:.1e}; secant {worst_secant:.1e} over {outer} outer + {inner} inner updates"
        ),
    }
}

fn criterion_6() -> Line {
    let omega = 2.0 * PI * 60.0;
    let n = 25;
    let dt = 1.0 / 60.0 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fit_err = 0.0_f64;
    for _ in 0..RANDOM_CASES / 10 {
        let dc: f64 = rng.gen_range(-2.0..2.0);
        let amp: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.5)).collect();
        let ph: Vec<f64> = (0..6).map(|_| rng.gen_range(-PI..PI)).collect();
        let t0: f64 = rng.gen_range(0.0..0.1);
        let rec = WaveRecord::sample(
            |t| {
                dc + (1..=5)
                    .map(|h| amp[h] * (h as f64 * omega * t + ph[h]).cos())
                    .sum::<f64>()
            },
            n,
            dt,
            t0,
        );
        let x = fit_phasor(&rec, omega).expect("fit");
        let expected = Complex64::from_polar(amp[1] / 2f64.sqrt(), ph[1]);
        fit_err = fit_err.max((x - expected).norm());
    }
    let a = Complex64::new(-0.5, 3f64.sqrt() / 2.0);
    let mut seq_err = 0.0_f64;
    let mut power_err = 0.0_f64;
    let mut c = || Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    for _ in 0..RANDOM_CASES {
        let v = [c(), c(), c()];
        let i = [c(), c(), c()];
        seq_err = seq_err.max((positive_sequence(&v) - seq_positive(&v)).norm());
        let zero = |x: &[Complex64; 3]| (x[0] + x[1] + x[2]) / 3.0;
        let neg = |x: &[Complex64; 3]| (x[0] + a * a * x[1] + a * x[2]) / 3.0;
        let pos = positive_sequence;
        let phase: Complex64 = (0..3).map(|k| v[k] * i[k].conj()).sum();
        let seq = 3.0
            * (zero(&v) * zero(&i).conj() + pos(&v) * pos(&i).conj() + neg(&v) * neg(&i).conj());
        power_err = power_err.max((phase - seq).norm());
    }
    let balanced = {
        let x = Complex64::from_polar(1.02, 0.3);
        (positive_sequence(&balanced_set(x)) - x).norm()
    };
    let pass = fit_err < FIT_TOL
        && seq_err < IDENTITY_CASE_TOL
        && power_err < IDENTITY_CASE_TOL
        && balanced < IDENTITY_CASE_TOL;
    Line {
        id: 6,
        pass,
        detail: format!(
            "fit error {fit_err:.1e} at N = 25; positive sequence {seq_err:.1e}, power identity {power_err:.1e} over {RANDOM_CASES} cases"
        ),
    }
}

fn criterion_7() -> Line {
    let spec = spec(0.1);
    let omega = spec.omega_base();
    let pf = power_flow(&spec, &PowerFlowOptions::default()).expect("power flow");
    let mut worst = 0.0_f64;
    let times = [0.0, 1.3e-3, 7.1e-3];
    for (g, gen) in spec.generators.iter().enumerate() {
        let b = spec.bus_index(&gen.bus).expect("bus");
        let v = pf.bus_v[b];
        let init = init_sync_machine(gen, spec.base_mva, omega, v, pf.gen_power[g]);
        let m = emt_init::emt::machine::SyncMachine::new(gen.params(spec.base_mva), omega);
        for t in times {
            let vabc = balanced_set(v).map(|x| instantaneous(x, omega, t));
            let mut d = [0.0; emt_init::emt::machine::GEN_STATES];
            m.deriv(&init.states, vabc, t, init.efd, init.tm, &mut d);
            worst = worst.max(d.iter().fold(0.0_f64, |a, x| a.max(x.abs())));
        }
    }
    let angle = emt_init::emt::induction::ROTOR_ANGLE;
    for (k, mot) in spec.motors.iter().enumerate() {
        let b = spec.bus_index(&mot.bus).expect("bus");
        let v = pf.bus_v[b];
        let init = init_induction_machine(mot, spec.base_mva, omega, v, 1.25).expect("motor init");
        let m = emt_init::emt::induction::InductionMachine::new(mot.params(spec.base_mva), omega);
        for t in times {
            let vabc = balanced_set(v).map(|x| instantaneous(x, omega, t));
            let mut d = [0.0; emt_init::emt::induction::MOTOR_STATES];
            m.deriv(&init.states, vabc, t, init.tl, &mut d);
            // the slip angle is a ramp by construction
            for (j, x) in d.iter().enumerate() {
                if j != angle {
                    worst = worst.max(x.abs());
                }
            }
        }
        let _ = k;
    }
    let (balanced, _) = run(0.0, Preconditioning::Broyden);
    let iters = balanced.stats.iterations();
    let pass =
        worst < MAX_MACHINE_DERIVATIVE && balanced.stats.converged && iters <= MAX_BALANCED_NEWTON;
    Line {
        id: 7,
        pass,
        detail: format!(
            "largest machine derivative {worst:.1e}; k = 0 converges in {iters} iterations (‖F‖ {:.1e})",
            balanced.stats.final_norm()
        ),
    }
}

fn main() {
    let (pre, seconds) = run(0.1, Preconditioning::Broyden);
    let (off, _) = run(0.1, Preconditioning::Off);
    let unbalanced = free_run(0.1);
    let balanced = free_run(0.0);
    let lines = [
        criterion_1(&pre, seconds),
        criterion_2(&pre, &off),
        criterion_3(&unbalanced, &balanced),
        criterion_4(&pre),
        criterion_5(&pre),
        criterion_6(),
        criterion_7(),
    ];
    let mut failed = 0;
    for l in &lines {
        let tag = if l.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {}: {}", l.id, l.detail);
        failed += usize::from(!l.pass);
    }
    println!("{} of {} criteria pass", lines.len() - failed, lines.len());
}
