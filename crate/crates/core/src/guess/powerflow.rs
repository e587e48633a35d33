//! Positive-sequence Newton-Raphson power flow with an optional
//! three-phase current-injection refinement.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::emt::induction::{InductionMachine, MotorInitError};
use crate::netlist::{allocate_load, NetlistError, PfKind, PqScope, SystemSpec};
use crate::phasor::{balanced_set, positive_sequence, rot120, zip_target};

type C = Complex64;

/// Current mismatch (p.u.) at which the constant-power refinement stops.
const REFINE_TOLERANCE: f64 = 1e-12;
const REFINE_STEP: f64 = 1e-7;

/// What follows the balanced solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    /// Balanced expansion only.
    Off,
    /// One three-phase nodal solve with the loads as admittances at the
    /// balanced magnitudes.
    Sweep,
    /// The sweep, then Newton on the three-phase network with each load phase
    /// drawing its share at its own magnitude.
    ConstantPower,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PowerFlowError {
    #[error("power flow did not converge in {iterations} iterations (mismatch {mismatch:.3e})")]
    Diverged { iterations: usize, mismatch: f64 },
    #[error("singular power-flow Jacobian")]
    Singular,
    #[error("no angle reference device")]
    NoReference,
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("motor {id}: {source}")]
    Motor {
        id: String,
        #[source]
        source: MotorInitError,
    },
    #[error(transparent)]
    Allocation(#[from] NetlistError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub refine: Refinement,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tolerance: 1e-8,
            max_iterations: 30,
            refine: Refinement::ConstantPower,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Positive-sequence bus voltages of the balanced solution.
    pub bus_v: Vec<C>,
    /// Phase voltages after expansion (and refinement, when enabled).
    pub phase_v: Vec<[C; 3]>,
    /// Generator phase currents, delivered.
    pub gen_current: Vec<[C; 3]>,
    /// Motor phase currents, drawn.
    pub motor_current: Vec<[C; 3]>,
    /// Load phase currents, drawn.
    pub load_current: Vec<[C; 3]>,
    /// Generator complex power of the balanced solution.
    pub gen_power: Vec<C>,
    pub motor_slip: Vec<f64>,
    /// Injection at the angle-reference bus.
    pub slack: C,
    pub iterations: usize,
    pub max_mismatch: f64,
    /// Refinement that produced `phase_v` and the currents.
    pub refinement: Refinement,
}

impl PowerFlowSolution {
    /// `bus,Vmag,Vang` with the positive-sequence magnitude and angle (rad).
    pub fn write_csv<W: Write>(&self, spec: &SystemSpec, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bus", "Vmag", "Vang"])?;
        for (b, v) in spec.buses.iter().zip(&self.bus_v) {
            out.write_record([
                b.id.clone(),
                format!("{:e}", v.norm()),
                format!("{:e}", v.arg()),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Bus admittance matrix of one phase, matching the transient network:
/// series branch `1/(r+jx)` with the tap on the `from` side, half the line
/// charging at each end, bus shunts.
pub fn admittance_matrix(spec: &SystemSpec) -> Result<DMatrix<C>, PowerFlowError> {
    let n = spec.buses.len();
    let mut y = DMatrix::<C>::zeros(n, n);
    for (b, bus) in spec.buses.iter().enumerate() {
        y[(b, b)] += C::new(0.0, bus.b_shunt);
    }
    for br in &spec.branches {
        let f = bus_index(spec, &br.from)?;
        let t = bus_index(spec, &br.to)?;
        let ys = C::new(br.r, br.x).inv();
        let half = C::new(0.0, 0.5 * br.b);
        y[(f, f)] += ys / (br.ratio * br.ratio) + half;
        y[(t, t)] += ys + half;
        y[(f, t)] -= ys / br.ratio;
        y[(t, f)] -= ys / br.ratio;
    }
    Ok(y)
}

fn bus_index(spec: &SystemSpec, id: &str) -> Result<usize, PowerFlowError> {
    spec.bus_index(id)
        .ok_or_else(|| PowerFlowError::UnknownBus(id.to_string()))
}

#[derive(Clone, Copy, PartialEq)]
enum BusKind {
    Slack,
    Pv,
    Pq,
}

/// Complex power consumed by load `k` at voltage magnitude `v`, three-phase.
pub(crate) fn load_power(spec: &SystemSpec, k: usize, v: f64) -> C {
    let load = &spec.loads[k];
    match spec.condition_for(&load.id).map(|c| c.kind) {
        Some(PfKind::Pq { p0, q0, zip, .. }) => {
            let (p, q) = zip_target(v, &zip, p0, q0);
            C::new(p, q)
        }
        _ => load.s_total,
    }
}

/// Per-phase shares (three-phase base) of load `k` at phase magnitudes `v`.
pub(crate) fn load_phase_targets(
    spec: &SystemSpec,
    k: usize,
    v: [f64; 3],
) -> Result<[C; 3], NetlistError> {
    let load = &spec.loads[k];
    match spec.condition_for(&load.id).map(|c| c.kind) {
        Some(PfKind::Pq {
            p0,
            q0,
            zip,
            scope: PqScope::PerPhase { alloc_k },
        }) => {
            let shares = allocate_load(C::new(p0, q0), alloc_k)?;
            Ok([0, 1, 2].map(|ph| {
                let (p, q) = zip_target(v[ph], &zip, shares[ph].re, shares[ph].im);
                C::new(p, q)
            }))
        }
        Some(PfKind::Pq { p0, q0, zip, .. }) => Ok([0, 1, 2].map(|ph| {
            let (p, q) = zip_target(v[ph], &zip, p0, q0);
            C::new(p, q) / 3.0
        })),
        _ => Ok([load.s_total / 3.0; 3]),
    }
}

fn motor_model(spec: &SystemSpec, m: usize) -> InductionMachine {
    InductionMachine::new(spec.motors[m].params(spec.base_mva), spec.omega_base())
}

fn motor_power(spec: &SystemSpec, m: usize) -> f64 {
    match spec.condition_for(&spec.motors[m].id).map(|c| c.kind) {
        Some(PfKind::MotorP { p }) => p,
        _ => 0.0,
    }
}

/// Newton-Raphson on the balanced positive-sequence network, then balanced
/// expansion and the optional three-phase refinement.
pub fn power_flow(
    spec: &SystemSpec,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = spec.buses.len();
    let y = admittance_matrix(spec)?;

    let mut kind = vec![BusKind::Pq; n];
    let mut v = vec![C::new(1.0, 0.0); n];
    let mut slack = None;
    for c in &spec.conditions {
        let Some(g) = spec.generators.iter().position(|g| g.id == c.device) else {
            continue;
        };
        let b = bus_index(spec, &spec.generators[g].bus)?;
        match c.kind {
            PfKind::VTheta { v: vm, theta } => {
                kind[b] = BusKind::Slack;
                v[b] = C::from_polar(vm, theta);
                slack = Some(b);
            }
            PfKind::Pv { v: vm, .. } if kind[b] != BusKind::Slack => {
                kind[b] = BusKind::Pv;
                v[b] = C::from_polar(vm, 0.0);
            }
            _ => {}
        }
    }
    let slack = slack.ok_or(PowerFlowError::NoReference)?;

    let gen_bus: Vec<usize> = spec
        .generators
        .iter()
        .map(|g| bus_index(spec, &g.bus))
        .collect::<Result<_, _>>()?;
    let motor_bus: Vec<usize> = spec
        .motors
        .iter()
        .map(|m| bus_index(spec, &m.bus))
        .collect::<Result<_, _>>()?;
    let load_bus: Vec<usize> = spec
        .loads
        .iter()
        .map(|l| bus_index(spec, &l.bus))
        .collect::<Result<_, _>>()?;

    // power drawn by motors and loads at each bus for the current voltages
    let consumption = |v: &[C]| -> Result<Vec<C>, PowerFlowError> {
        let mut s = vec![C::new(0.0, 0.0); n];
        for (k, &b) in load_bus.iter().enumerate() {
            s[b] += load_power(spec, k, v[b].norm());
        }
        for (m, &b) in motor_bus.iter().enumerate() {
            let init = motor_model(spec, m)
                .init_for_power(C::new(v[b].norm(), 0.0), motor_power(spec, m))
                .map_err(|source| PowerFlowError::Motor {
                    id: spec.motors[m].id.clone(),
                    source,
                })?;
            s[b] += C::new(v[b].norm(), 0.0) * init.current.conj();
        }
        Ok(s)
    };
    let mut gen_fixed = vec![C::new(0.0, 0.0); n];
    for (g, gen) in spec.generators.iter().enumerate() {
        match spec.condition_for(&gen.id).map(|c| c.kind) {
            Some(PfKind::Pv { p, .. }) => gen_fixed[gen_bus[g]] += C::new(p, 0.0),
            Some(PfKind::Pq { p0, q0, .. }) => gen_fixed[gen_bus[g]] += C::new(p0, q0),
            _ => {}
        }
    }

    let theta_idx: Vec<usize> = (0..n).filter(|&b| kind[b] != BusKind::Slack).collect();
    let vm_idx: Vec<usize> = (0..n).filter(|&b| kind[b] == BusKind::Pq).collect();
    let dim = theta_idx.len() + vm_idx.len();

    let mut iterations = 0;
    let mut mismatch_max;
    loop {
        let vv = DVector::from_column_slice(&v);
        let ibus = &y * &vv;
        let s_calc: Vec<C> = (0..n).map(|b| v[b] * ibus[b].conj()).collect();
        let cons = consumption(&v)?;
        let mut mis = DVector::<f64>::zeros(dim);
        for (r, &b) in theta_idx.iter().enumerate() {
            mis[r] = (gen_fixed[b] - cons[b] - s_calc[b]).re;
        }
        for (r, &b) in vm_idx.iter().enumerate() {
            mis[theta_idx.len() + r] = (gen_fixed[b] - cons[b] - s_calc[b]).im;
        }
        mismatch_max = mis.amax();
        if mismatch_max < opts.tolerance {
            break;
        }
        if iterations >= opts.max_iterations || !mismatch_max.is_finite() {
            return Err(PowerFlowError::Diverged {
                iterations,
                mismatch: mismatch_max,
            });
        }
        iterations += 1;

        // dS/dθ = j·diag(V)·conj(diag(I) − Y·diag(V)),
        // dS/d|V| = diag(V)·conj(Y·diag(V/|V|)) + conj(diag(I))·diag(V/|V|)
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        let vn: Vec<C> = v.iter().map(|x| x / x.norm()).collect();
        let ds_dth = |i: usize, k: usize| -> C {
            let mut d = -y[(i, k)] * v[k];
            if i == k {
                d += ibus[i];
            }
            C::i() * v[i] * d.conj()
        };
        let ds_dvm = |i: usize, k: usize| -> C {
            let mut d = v[i] * (y[(i, k)] * vn[k]).conj();
            if i == k {
                d += ibus[i].conj() * vn[i];
            }
            d
        };
        let rows: Vec<(usize, bool)> = theta_idx
            .iter()
            .map(|&b| (b, true))
            .chain(vm_idx.iter().map(|&b| (b, false)))
            .collect();
        for (r, &(bi, is_p)) in rows.iter().enumerate() {
            for (c, &bk) in theta_idx.iter().enumerate() {
                let d = ds_dth(bi, bk);
                jac[(r, c)] = if is_p { d.re } else { d.im };
            }
            for (c, &bk) in vm_idx.iter().enumerate() {
                let d = ds_dvm(bi, bk);
                jac[(r, theta_idx.len() + c)] = if is_p { d.re } else { d.im };
            }
        }
        let dx = jac.lu().solve(&mis).ok_or(PowerFlowError::Singular)?;
        for (c, &b) in theta_idx.iter().enumerate() {
            v[b] *= C::from_polar(1.0, dx[c]);
        }
        for (c, &b) in vm_idx.iter().enumerate() {
            let vm = v[b].norm() + dx[theta_idx.len() + c];
            v[b] = C::from_polar(vm, v[b].arg());
        }
    }

    // device powers of the balanced solution
    let vv = DVector::from_column_slice(&v);
    let ibus = &y * &vv;
    let s_calc: Vec<C> = (0..n).map(|b| v[b] * ibus[b].conj()).collect();
    let cons = consumption(&v)?;
    let mut gen_power = vec![C::new(0.0, 0.0); spec.generators.len()];
    for b in 0..n {
        let at_bus: Vec<usize> = (0..spec.generators.len())
            .filter(|&g| gen_bus[g] == b)
            .collect();
        if at_bus.is_empty() {
            continue;
        }
        let total = s_calc[b] + cons[b];
        let mut fixed = C::new(0.0, 0.0);
        let mut free = Vec::new();
        for &g in &at_bus {
            match spec.condition_for(&spec.generators[g].id).map(|c| c.kind) {
                Some(PfKind::Pq { p0, q0, .. }) => {
                    gen_power[g] = C::new(p0, q0);
                    fixed += gen_power[g];
                }
                Some(PfKind::Pv { p, .. }) if kind[b] != BusKind::Slack => {
                    gen_power[g] = C::new(p, 0.0);
                    fixed += gen_power[g];
                    free.push(g);
                }
                _ => free.push(g),
            }
        }
        let rest = total - fixed;
        if kind[b] == BusKind::Slack {
            let slack_gens: Vec<usize> = free
                .iter()
                .copied()
                .filter(|&g| {
                    !matches!(
                        spec.condition_for(&spec.generators[g].id).map(|c| c.kind),
                        Some(PfKind::Pv { .. })
                    )
                })
                .collect();
            for &g in &slack_gens {
                gen_power[g] += rest / slack_gens.len() as f64;
            }
        } else if !free.is_empty() {
            for &g in &free {
                gen_power[g] += C::new(0.0, rest.im / free.len() as f64);
            }
        }
    }

    let mut motor_slip = Vec::with_capacity(spec.motors.len());
    let mut motor_current = Vec::with_capacity(spec.motors.len());
    for (m, &b) in motor_bus.iter().enumerate() {
        let init = motor_model(spec, m)
            .init_for_power(v[b], motor_power(spec, m))
            .map_err(|source| PowerFlowError::Motor {
                id: spec.motors[m].id.clone(),
                source,
            })?;
        motor_slip.push(init.slip);
        motor_current.push(balanced_set(init.current));
    }
    let gen_current: Vec<[C; 3]> = gen_power
        .iter()
        .zip(&gen_bus)
        .map(|(s, &b)| balanced_set((s / v[b]).conj()))
        .collect();
    let mut load_current = Vec::with_capacity(spec.loads.len());
    for (k, &b) in load_bus.iter().enumerate() {
        let shares = load_phase_targets(spec, k, [v[b].norm(); 3])?;
        let vs = balanced_set(v[b]);
        load_current.push([0, 1, 2].map(|ph| (shares[ph] * 3.0 / vs[ph]).conj()));
    }

    let mut sol = PowerFlowSolution {
        phase_v: v.iter().map(|x| balanced_set(*x)).collect(),
        bus_v: v,
        gen_current,
        motor_current,
        load_current,
        gen_power,
        motor_slip,
        slack: s_calc[slack] + cons[slack],
        iterations,
        max_mismatch: mismatch_max,
        refinement: Refinement::Off,
    };
    if opts.refine != Refinement::Off {
        refine(spec, &y, &gen_bus, &motor_bus, &load_bus, opts, &mut sol)?;
    }
    Ok(sol)
}

/// Newton on the real and imaginary parts of the nodal current mismatch,
/// with a forward-difference Jacobian; the mismatch is not holomorphic in
/// the voltages.
fn constant_power_solve(
    mismatch: &dyn Fn(&DVector<C>) -> Result<DVector<C>, PowerFlowError>,
    v0: DVector<C>,
    opts: &PowerFlowOptions,
) -> Result<DVector<C>, PowerFlowError> {
    let n = v0.len();
    let split =
        |v: &DVector<C>| DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im });
    let join = |x: &DVector<f64>| DVector::from_fn(n, |i, _| C::new(x[i], x[n + i]));
    let eval = |x: &DVector<f64>| mismatch(&join(x)).map(|r| split(&r));
    let mut x = split(&v0);
    let mut f = eval(&x)?;
    for it in 0..opts.max_iterations {
        let worst = f.amax();
        log::debug!("constant-power refinement {it}: mismatch {worst:.3e}");
        if worst < REFINE_TOLERANCE {
            return Ok(join(&x));
        }
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        for c in 0..2 * n {
            let mut xp = x.clone();
            xp[c] += REFINE_STEP;
            jac.set_column(c, &((eval(&xp)? - &f) / REFINE_STEP));
        }
        let dx = jac.lu().solve(&f).ok_or(PowerFlowError::Singular)?;
        x -= dx;
        f = eval(&x)?;
    }
    Err(PowerFlowError::Diverged {
        iterations: opts.max_iterations,
        mismatch: f.amax(),
    })
}

/// Projectors onto the positive- and negative-sequence components of a phase
/// set, in phase coordinates.
fn sequence_projectors() -> (DMatrix<C>, DMatrix<C>) {
    let a = rot120();
    let a2 = a * a;
    let one = C::new(1.0, 0.0);
    let pos =
        DMatrix::from_row_slice(3, 3, &[one, a, a2, a2, one, a, a, a2, one]) / C::new(3.0, 0.0);
    let neg =
        DMatrix::from_row_slice(3, 3, &[one, a2, a, a, one, a2, a2, a, one]) / C::new(3.0, 0.0);
    (pos, neg)
}

/// Three-phase network solve: generators as subtransient EMFs behind a
/// floating-wye admittance, motors as sequence admittances at their balanced
/// slip, loads carrying their unbalanced shares.
fn refine(
    spec: &SystemSpec,
    y1: &DMatrix<C>,
    gen_bus: &[usize],
    motor_bus: &[usize],
    load_bus: &[usize],
    opts: &PowerFlowOptions,
    sol: &mut PowerFlowSolution,
) -> Result<(), PowerFlowError> {
    let mode = opts.refine;
    let n = spec.buses.len();
    let idx = |b: usize, ph: usize| 3 * b + ph;
    let mut y = DMatrix::<C>::zeros(3 * n, 3 * n);
    for r in 0..n {
        for c in 0..n {
            for ph in 0..3 {
                y[(idx(r, ph), idx(c, ph))] = y1[(r, c)];
            }
        }
    }
    let mut inj = DVector::<C>::zeros(3 * n);
    let floating = |yg: C| {
        DMatrix::from_fn(3, 3, |r, c| {
            let e = if r == c { 1.0 } else { 0.0 };
            yg * (e - 1.0 / 3.0)
        })
    };

    let mut gen_terms = Vec::with_capacity(spec.generators.len());
    for (g, gen) in spec.generators.iter().enumerate() {
        let p = gen.params(spec.base_mva);
        let b = gen_bus[g];
        let z = C::new(p.ra, 0.5 * (p.xd_st + p.xq_st));
        let e = sol.bus_v[b] + z * (sol.gen_power[g] / sol.bus_v[b]).conj();
        let ymat = floating(z.inv());
        let e_abc = DVector::from_column_slice(&balanced_set(e));
        let src = &ymat * &e_abc;
        for r in 0..3 {
            inj[idx(b, r)] += src[r];
            for c in 0..3 {
                y[(idx(b, r), idx(b, c))] += ymat[(r, c)];
            }
        }
        gen_terms.push((ymat, e_abc));
    }
    let (pos, neg) = sequence_projectors();
    let mut motor_y = Vec::with_capacity(spec.motors.len());
    for (m, &b) in motor_bus.iter().enumerate() {
        let model = motor_model(spec, m);
        let s = sol.motor_slip[m];
        let y_pos = model.steady_state(C::new(1.0, 0.0), s).current;
        let y_neg = model.steady_state(C::new(1.0, 0.0), 2.0 - s).current;
        let ym = &pos * y_pos + &neg * y_neg;
        for r in 0..3 {
            for c in 0..3 {
                y[(idx(b, r), idx(b, c))] += ym[(r, c)];
            }
        }
        motor_y.push(ym);
    }
    // load admittances at the balanced magnitudes
    let mut load_y = Vec::with_capacity(load_bus.len());
    let fixed = y.clone();
    for (k, &b) in load_bus.iter().enumerate() {
        let m = sol.bus_v[b].norm();
        let shares = load_phase_targets(spec, k, [m; 3])?;
        let yl: [C; 3] = [0, 1, 2].map(|ph| (shares[ph] * 3.0).conj() / (m * m));
        for ph in 0..3 {
            y[(idx(b, ph), idx(b, ph))] += yl[ph];
        }
        load_y.push(yl);
    }
    let mut v = y.lu().solve(&inj).ok_or(PowerFlowError::Singular)?;

    if mode == Refinement::ConstantPower {
        let currents = |v: &DVector<C>| -> Result<DVector<C>, PowerFlowError> {
            let mut r = &fixed * v - &inj;
            for (k, &b) in load_bus.iter().enumerate() {
                let vb = [0, 1, 2].map(|ph| v[idx(b, ph)]);
                let shares = load_phase_targets(spec, k, vb.map(|x| x.norm()))?;
                for ph in 0..3 {
                    r[idx(b, ph)] += (shares[ph] * 3.0 / vb[ph]).conj();
                }
            }
            Ok(r)
        };
        v = constant_power_solve(&currents, v, opts)?;
        for (k, &b) in load_bus.iter().enumerate() {
            let vb = [0, 1, 2].map(|ph| v[idx(b, ph)]);
            let shares = load_phase_targets(spec, k, vb.map(|x| x.norm()))?;
            load_y[k] = [0, 1, 2].map(|ph| (shares[ph] * 3.0).conj() / vb[ph].norm_sqr());
        }
    }
    let phase = |b: usize| [v[idx(b, 0)], v[idx(b, 1)], v[idx(b, 2)]];
    sol.phase_v = (0..n).map(phase).collect();

    for (g, (ymat, e)) in gen_terms.iter().enumerate() {
        let vb = DVector::from_column_slice(&phase(gen_bus[g]));
        let i = ymat * (e - vb);
        sol.gen_current[g] = [i[0], i[1], i[2]];
    }
    for (m, ym) in motor_y.iter().enumerate() {
        let i = ym * DVector::from_column_slice(&phase(motor_bus[m]));
        sol.motor_current[m] = [i[0], i[1], i[2]];
    }
    for (k, yl) in load_y.iter().enumerate() {
        let vb = phase(load_bus[k]);
        sol.load_current[k] = [0, 1, 2].map(|ph| yl[ph] * vb[ph]);
    }
    for (g, &b) in gen_bus.iter().enumerate() {
        let vp = positive_sequence(&sol.phase_v[b]);
        let ip = positive_sequence(&sol.gen_current[g]);
        log::debug!(
            "refined {}: S+ = {:.6}",
            spec.generators[g].id,
            vp * ip.conj()
        );
    }
    sol.refinement = mode;
    Ok(())
}
