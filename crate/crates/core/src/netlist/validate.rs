use std::collections::HashSet;
use std::fmt;

use super::*;

/// One violated rule, with the id of the offending record.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub subject: String,
    pub message: String,
}

impl Diagnostic {
    fn new(subject: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            subject: subject.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

/// Count of power-flow residuals against the quantities they determine
/// (dependent parameters plus external inputs).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EquationBalance {
    pub residuals: usize,
    pub free: usize,
}

impl EquationBalance {
    pub fn is_balanced(&self) -> bool {
        self.residuals == self.free
    }
}

/// Number of residual equations a condition contributes.
pub(crate) fn condition_residuals(kind: &PfKind) -> usize {
    match kind {
        PfKind::VTheta { .. } | PfKind::Pv { .. } => 2,
        PfKind::MotorP { .. } => 1,
        PfKind::Pq { q0, scope, .. } => {
            let per_site = if *q0 == 0.0 { 1 } else { 2 };
            match scope {
                PqScope::PerPhase { .. } => 3 * per_site,
                PqScope::PositiveSequence => per_site,
            }
        }
    }
}

pub fn equation_balance(spec: &SystemSpec) -> EquationBalance {
    let residuals = spec
        .conditions
        .iter()
        .map(|c| condition_residuals(&c.kind))
        .sum();
    // field voltage + mechanical torque per generator, load torque per motor,
    // R (and X when reactive) per load phase
    let mut free = 2 * spec.generators.len() + spec.motors.len();
    for load in &spec.loads {
        if let Some(PfCondition {
            kind: PfKind::Pq { q0, scope, .. },
            ..
        }) = spec.condition_for(&load.id)
        {
            let per_site = if *q0 == 0.0 { 1 } else { 2 };
            free += match scope {
                PqScope::PerPhase { .. } => 3 * per_site,
                PqScope::PositiveSequence => per_site,
            };
        }
    }
    EquationBalance { residuals, free }
}

/// Check every structural and physical rule. An empty list means the spec can
/// be assembled and initialized.
pub fn validate(spec: &SystemSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let buses: HashSet<&str> = spec.buses.iter().map(|b| b.id.as_str()).collect();

    if !(spec.base_mva > 0.0) {
        out.push(Diagnostic::new("system", "base_mva must be positive"));
    }
    if !(spec.nominal_freq > 0.0) {
        out.push(Diagnostic::new(
            "system",
            "nominal frequency must be positive",
        ));
    }
    if spec.init_steps_per_period < 5 {
        out.push(Diagnostic::new(
            "system",
            "at least 5 steps per period are needed for phasor extraction",
        ));
    }
    for msg in spec.solver.check() {
        out.push(Diagnostic::new("solver", msg));
    }

    // every bus needs a capacitive node for the EMT network
    let mut shunt: Vec<f64> = spec.buses.iter().map(|b| b.b_shunt).collect();
    for br in &spec.branches {
        for end in [&br.from, &br.to] {
            if let Some(i) = spec.bus_index(end) {
                shunt[i] += 0.5 * br.b;
            }
        }
    }
    for (bus, b) in spec.buses.iter().zip(&shunt) {
        if !(*b > 0.0) {
            out.push(Diagnostic::new(
                &bus.id,
                "bus has no shunt capacitance (line charging or b_shunt)",
            ));
        }
        if bus.b_shunt < 0.0 {
            out.push(Diagnostic::new(&bus.id, "negative bus shunt susceptance"));
        }
    }

    for br in &spec.branches {
        for end in [&br.from, &br.to] {
            if !buses.contains(end.as_str()) {
                out.push(Diagnostic::new(&br.id, format!("unknown bus `{end}`")));
            }
        }
        if br.from == br.to {
            out.push(Diagnostic::new(&br.id, "branch connects a bus to itself"));
        }
        if !(br.x > 0.0) {
            out.push(Diagnostic::new(&br.id, "series reactance must be positive"));
        }
        if br.r < 0.0 || br.b < 0.0 {
            out.push(Diagnostic::new(&br.id, "negative resistance or charging"));
        }
        if !(br.ratio > 0.0) {
            out.push(Diagnostic::new(
                &br.id,
                "transformer ratio must be positive",
            ));
        }
    }

    for g in &spec.generators {
        if !buses.contains(g.bus.as_str()) {
            out.push(Diagnostic::new(&g.id, format!("unknown bus `{}`", g.bus)));
        }
        let positive = [
            ("mva", g.mva),
            ("xl", g.xl),
            ("xd", g.xd),
            ("xq", g.xq),
            ("xd'", g.xd_t),
            ("xq'", g.xq_t),
            ("xd''", g.xd_st),
            ("xq''", g.xq_st),
            ("td0'", g.td0_t),
            ("tq0'", g.tq0_t),
            ("td0''", g.td0_st),
            ("tq0''", g.tq0_st),
            ("h", g.h),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                out.push(Diagnostic::new(&g.id, format!("{name} must be positive")));
            }
        }
        if g.ra < 0.0 || g.d < 0.0 {
            out.push(Diagnostic::new(&g.id, "negative resistance or damping"));
        }
        if !(g.xd_st < g.xd_t && g.xd_t < g.xd) {
            out.push(Diagnostic::new(
                &g.id,
                "d-axis reactance ordering violated (need xd'' < xd' < xd)",
            ));
        }
        if !(g.xq_st < g.xq_t && g.xq_t < g.xq) {
            out.push(Diagnostic::new(
                &g.id,
                "q-axis reactance ordering violated (need xq'' < xq' < xq)",
            ));
        }
        if !(g.xl < g.xd_st && g.xl < g.xq_st) {
            out.push(Diagnostic::new(
                &g.id,
                "leakage reactance must be below the subtransient reactances",
            ));
        }
        if !(g.td0_st < g.td0_t && g.tq0_st < g.tq0_t) {
            out.push(Diagnostic::new(
                &g.id,
                "subtransient time constants must be below transient ones",
            ));
        }
    }

    for m in &spec.motors {
        if !buses.contains(m.bus.as_str()) {
            out.push(Diagnostic::new(&m.id, format!("unknown bus `{}`", m.bus)));
        }
        for (name, v) in [
            ("mva", m.mva),
            ("rs", m.rs),
            ("xls", m.xls),
            ("rr", m.rr),
            ("xlr", m.xlr),
            ("xm", m.xm),
            ("h", m.h),
        ] {
            if !(v > 0.0) {
                out.push(Diagnostic::new(&m.id, format!("{name} must be positive")));
            }
        }
        if m.d < 0.0 {
            out.push(Diagnostic::new(&m.id, "negative damping"));
        }
    }

    for l in &spec.loads {
        if !buses.contains(l.bus.as_str()) {
            out.push(Diagnostic::new(&l.id, format!("unknown bus `{}`", l.bus)));
        }
        if !(l.alloc_k.abs() < 1.0) {
            out.push(Diagnostic::new(&l.id, "unbalance factor outside (-1, 1)"));
        }
        if l.s_total.re <= 0.0 || l.s_total.im < 0.0 {
            out.push(Diagnostic::new(
                &l.id,
                "static load must consume real power and non-negative reactive power",
            ));
        }
    }

    let n_ref = spec
        .conditions
        .iter()
        .filter(|c| matches!(c.kind, PfKind::VTheta { .. }))
        .count();
    match n_ref {
        0 => out.push(Diagnostic::new("system", "no angle reference device")),
        1 => {}
        _ => out.push(Diagnostic::new("system", "multiple angle references")),
    }

    for c in &spec.conditions {
        let Some(dev) = spec.device(&c.device) else {
            out.push(Diagnostic::new(
                &c.device,
                "condition names an unknown device",
            ));
            continue;
        };
        let ok = match (&c.kind, dev) {
            (PfKind::MotorP { .. }, DeviceRef::Motor(_)) => true,
            (PfKind::VTheta { .. } | PfKind::Pv { .. }, DeviceRef::Generator(_)) => true,
            (PfKind::Pq { scope, .. }, DeviceRef::Generator(_)) => {
                *scope == PqScope::PositiveSequence
            }
            (PfKind::Pq { .. }, DeviceRef::Load(_)) => true,
            _ => false,
        };
        if !ok {
            out.push(Diagnostic::new(
                &c.device,
                format!(
                    "`{}` condition does not apply to this device",
                    c.kind.name()
                ),
            ));
        }
        match c.kind {
            PfKind::VTheta { v, .. } | PfKind::Pv { v, .. } if !(v > 0.0) => {
                out.push(Diagnostic::new(
                    &c.device,
                    "voltage setpoint must be positive",
                ));
            }
            PfKind::Pq {
                q0,
                scope: PqScope::PerPhase { alloc_k },
                ..
            } => {
                if !(alloc_k.abs() < 1.0) {
                    out.push(Diagnostic::new(
                        &c.device,
                        "unbalance factor outside (-1, 1)",
                    ));
                }
                if q0 < 0.0 {
                    out.push(Diagnostic::new(
                        &c.device,
                        "capacitive per-phase loads are not supported",
                    ));
                }
            }
            _ => {}
        }
    }
    for g in &spec.generators {
        if spec.condition_for(&g.id).is_none() {
            out.push(Diagnostic::new(
                &g.id,
                "generator has no power-flow condition",
            ));
        }
    }
    for m in &spec.motors {
        if spec.condition_for(&m.id).is_none() {
            out.push(Diagnostic::new(&m.id, "motor has no power-flow condition"));
        }
    }

    let balance = equation_balance(spec);
    if !balance.is_balanced() {
        out.push(Diagnostic::new(
            "system",
            format!(
                "{} power-flow residuals but {} free parameters and inputs",
                balance.residuals, balance.free
            ),
        ));
    }
    out
}
