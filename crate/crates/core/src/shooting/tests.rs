use super::*;
use crate::emt::{build_system, DeviceKind, DeviceWaves, Inputs};
use crate::guess::{initial_state, power_flow, PowerFlowOptions};
use crate::netlist::{parse_system, WSCC9_STANDARD, WSCC9_UNBALANCED};
use crate::phasor::{balanced_set, instantaneous, Phasor};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn problem(text: &str, k: Option<f64>) -> (ShootingProblem, DVector<f64>) {
    let mut spec = parse_system(text).unwrap();
    if let Some(k) = k {
        spec.set_unbalance(k).unwrap();
    }
    let sys = build_system(&spec, spec.period() / 25.0).unwrap();
    let pf = power_flow(&spec, &PowerFlowOptions::default()).unwrap();
    let guess = initial_state(&spec, &sys, &pf).unwrap();
    let p = ShootingProblem::new(&spec, sys, &guess).unwrap();
    let x0 = p.pack(&guess.state);
    (p, x0)
}

#[test]
fn unbalanced_layout_counts() {
    let (p, _) = problem(WSCC9_UNBALANCED, None);
    let lay = &p.layout;
    assert_eq!(lay.dim(), p.system.dim() + 19);
    assert_eq!(lay.residual_kinds.len(), lay.dim());
    assert_eq!(lay.count(ResidualKind::PowerFlow), 19);
    assert_eq!(lay.count(ResidualKind::InitialValue), 1);
    let loads = lay
        .entries
        .iter()
        .filter(|e| matches!(e, Unknown::LoadR { .. } | Unknown::LoadX { .. }))
        .count();
    let inputs = lay
        .entries
        .iter()
        .filter(|e| matches!(e, Unknown::Efd(_) | Unknown::Tm(_) | Unknown::Tl(_)))
        .count();
    assert_eq!((loads, inputs), (12, 7));
    let pin = lay.index("M5.rotor_angle").unwrap();
    assert!(matches!(
        lay.entries[pin],
        Unknown::State {
            tag: StateTag::InitialValue { .. },
            ..
        }
    ));
    assert_eq!(lay.names.len(), lay.dim());
    assert_eq!(lay.residual_names.last().unwrap(), "L8.q.c");
}

#[test]
fn balanced_layout_has_no_pins() {
    let (p, _) = problem(WSCC9_STANDARD, None);
    assert_eq!(p.layout.count(ResidualKind::InitialValue), 0);
    assert_eq!(
        p.layout.count(ResidualKind::PowerFlow),
        p.dim() - p.system.dim()
    );
}

#[test]
fn unmatched_condition_is_named() {
    let text = WSCC9_UNBALANCED.replace("M5 motorp 1.25\n", "");
    let spec = parse_system(&text).unwrap();
    let sys = build_system(&spec, spec.period() / 25.0).unwrap();
    let err = build_layout(&spec, &sys).unwrap_err();
    assert!(err.to_string().contains("M5"), "{err}");
}

#[test]
fn load_parameter_perturbation_is_local() {
    let (p, x0) = problem(WSCC9_UNBALANCED, None);
    let i = p.layout.index("L6.r.b").unwrap();
    let mut x = x0.clone();
    x[i] *= 1.1;
    let a = p.apply_unknowns(&x0).unwrap();
    let b = p.apply_unknowns(&x).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.inputs.load_r[0][1] * 1.1, b.inputs.load_r[0][1]);
    let mut changed = b.inputs.clone();
    changed.load_r[0][1] = a.inputs.load_r[0][1];
    assert_eq!(changed, a.inputs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn pack_inverts_apply(seed in proptest::collection::vec(-2.0f64..2.0, 128)) {
        let (p, x0) = problem(WSCC9_UNBALANCED, None);
        let x = DVector::from_iterator(p.dim(), (0..p.dim()).map(|i| x0[i] + seed[i % seed.len()]));
        let back = p.pack(&p.apply_unknowns(&x).unwrap());
        prop_assert_eq!(back, x);
    }
}

#[test]
fn named_values_round_trip_in_any_order() {
    let (p, x0) = problem(WSCC9_UNBALANCED, None);
    let mut pairs: Vec<(String, f64)> = p
        .layout
        .names
        .iter()
        .cloned()
        .zip(x0.iter().copied())
        .collect();
    pairs.reverse();
    assert_eq!(p.layout.from_named(&pairs).unwrap(), x0);
    let missing = pairs.pop().unwrap().0;
    assert_eq!(
        p.layout.from_named(&pairs).unwrap_err(),
        ShootingError::MissingUnknown(missing)
    );
    pairs.push(("G9.efd".into(), 1.0));
    assert_eq!(
        p.layout.from_named(&pairs).unwrap_err(),
        ShootingError::UnexpectedUnknown("G9.efd".into())
    );
}

#[test]
fn wrong_dimension_is_rejected() {
    let (p, _) = problem(WSCC9_UNBALANCED, None);
    let err = p.apply_unknowns(&DVector::zeros(3)).unwrap_err();
    assert_eq!(
        err,
        ShootingError::Dimension {
            got: 3,
            want: p.dim()
        }
    );
}

/// One-period record of a device seeing phasors `v` and `i`.
fn synthetic(
    device: &str,
    kind: DeviceKind,
    v: [Phasor; 3],
    i: [Phasor; 3],
    w0: f64,
) -> TrajectoryRecord {
    let n = 25;
    let h = 2.0 * std::f64::consts::PI / w0 / n as f64;
    let sample = |x: Phasor| {
        (1..=n)
            .map(|k| instantaneous(x, w0, k as f64 * h))
            .collect::<Vec<_>>()
    };
    let dummy = SystemState {
        t: 0.0,
        x: DVector::zeros(1),
        inputs: Inputs {
            load_r: vec![],
            load_x: vec![],
            efd: vec![],
            tm: vec![],
            tl: vec![],
        },
    };
    TrajectoryRecord {
        t0: 0.0,
        h,
        steps: n,
        start: dummy.clone(),
        end: dummy,
        waves: vec![DeviceWaves {
            device: device.to_string(),
            kind,
            bus: 0,
            v: v.map(sample),
            i: i.map(sample),
        }],
    }
}

/// Bundled spec reduced to the condition of one device.
fn single_condition(device: &str) -> SystemSpec {
    let mut spec = parse_system(WSCC9_UNBALANCED).unwrap();
    spec.set_unbalance(0.0).unwrap();
    spec.conditions.retain(|c| c.device == device);
    spec
}

#[test]
fn vtheta_at_target_is_zero() {
    let spec = single_condition("G1");
    let v = balanced_set(Phasor::new(1.04, 0.0));
    let traj = synthetic(
        "G1",
        DeviceKind::Generator,
        v,
        balanced_set(Phasor::new(0.5, 0.1)),
        spec.omega_base(),
    );
    let r = pf_residuals(&traj, &spec, spec.omega_base()).unwrap();
    assert_eq!(r.len(), 2);
    assert!(r.iter().all(|x| x.abs() < 1e-13), "{r:?}");
}

#[test]
fn pv_residual_example() {
    let spec = single_condition("G2");
    let v = Phasor::new(1.020, 0.0);
    let i = (Phasor::new(1.60, 0.2) / v).conj();
    let traj = synthetic(
        "G2",
        DeviceKind::Generator,
        balanced_set(v),
        balanced_set(i),
        spec.omega_base(),
    );
    let r = pf_residuals(&traj, &spec, spec.omega_base()).unwrap();
    assert_abs_diff_eq!(r[0], 0.03, epsilon = 1e-12);
    assert_abs_diff_eq!(r[1], 0.005, epsilon = 1e-12);
}

#[test]
fn per_phase_pq_at_target_is_zero() {
    // L6 is 0.9 + j0.3, so k = 0 gives 0.30 + j0.10 on every phase
    let spec = single_condition("L6");
    let v = [Phasor::new(1.0, 0.0); 3];
    let i = [Phasor::new(0.9, -0.3); 3];
    let traj = synthetic("L6", DeviceKind::Load, v, i, spec.omega_base());
    let r = pf_residuals(&traj, &spec, spec.omega_base()).unwrap();
    assert_eq!(r.len(), 6);
    assert!(r.iter().all(|x| x.abs() < 1e-13), "{r:?}");
}

#[test]
fn unrecorded_device_is_an_error() {
    let spec = single_condition("G1");
    let traj = synthetic(
        "X9",
        DeviceKind::Generator,
        [Phasor::new(1.0, 0.0); 3],
        [Phasor::new(1.0, 0.0); 3],
        spec.omega_base(),
    );
    assert_eq!(
        pf_residuals(&traj, &spec, spec.omega_base()).unwrap_err(),
        ShootingError::MissingDevice("G1".into())
    );
}

#[test]
fn evaluation_is_deterministic_and_counted() {
    let (p, x0) = problem(WSCC9_UNBALANCED, None);
    let a = p.evaluate(&x0).unwrap();
    let b = p.evaluate(&x0).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.values.len(), p.dim());
    assert_eq!((a.evaluation, b.evaluation, p.evaluations()), (1, 2, 2));
    let recomposed =
        (a.periodic_norm.powi(2) + a.initial_norm.powi(2) + a.power_flow_norm.powi(2)).sqrt();
    assert_abs_diff_eq!(recomposed, a.norm, epsilon = 1e-14 * a.norm.max(1.0));
    // the pin is taken from the guess
    assert_eq!(a.initial_norm, 0.0);
}

#[test]
fn balanced_guess_is_nearly_exact() {
    let (p, x0) = problem(WSCC9_UNBALANCED, Some(0.0));
    let r = p.evaluate(&x0).unwrap();
    assert!(r.norm < 1e-2, "{}", r.norm);
}
