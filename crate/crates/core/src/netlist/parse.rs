use std::collections::HashSet;
use std::fmt::Write as _;

use num_complex::Complex64;

use super::*;
use crate::solver::{Preconditioning, SolverOptions};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Bus,
    Branch,
    Gen,
    Motor,
    Load,
    PfCond,
    Solver,
}

impl Section {
    fn from_header(name: &str) -> Option<Self> {
        Some(match name.to_ascii_uppercase().as_str() {
            "BUS" => Section::Bus,
            "BRANCH" => Section::Branch,
            "GEN" => Section::Gen,
            "MOTOR" => Section::Motor,
            "LOAD" => Section::Load,
            "PFCOND" => Section::PfCond,
            "SOLVER" => Section::Solver,
            _ => return None,
        })
    }
}

struct Fields<'a> {
    line: usize,
    items: Vec<&'a str>,
    pos: usize,
}

impl<'a> Fields<'a> {
    fn new(line: usize, text: &'a str) -> Self {
        Fields {
            line,
            items: text.split_whitespace().collect(),
            pos: 0,
        }
    }

    fn word(&mut self, field: &'static str) -> Result<&'a str, NetlistError> {
        let w = self
            .items
            .get(self.pos)
            .copied()
            .ok_or(NetlistError::MissingField {
                line: self.line,
                field,
            })?;
        self.pos += 1;
        Ok(w)
    }

    fn number(&mut self, field: &'static str) -> Result<f64, NetlistError> {
        let w = self.word(field)?;
        parse_number(self.line, field, w)
    }

    fn opt_number(&mut self, field: &'static str) -> Result<Option<f64>, NetlistError> {
        if self.pos >= self.items.len() {
            return Ok(None);
        }
        self.number(field).map(Some)
    }

    fn remaining(&self) -> usize {
        self.items.len() - self.pos
    }

    fn finish(&self) -> Result<(), NetlistError> {
        if self.pos < self.items.len() {
            return Err(NetlistError::Syntax {
                line: self.line,
                msg: format!("unexpected trailing field `{}`", self.items[self.pos]),
            });
        }
        Ok(())
    }
}

fn parse_number(line: usize, field: &'static str, w: &str) -> Result<f64, NetlistError> {
    let v: f64 = w.parse().map_err(|_| NetlistError::Syntax {
        line,
        msg: format!("field `{field}`: `{w}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(NetlistError::Syntax {
            line,
            msg: format!("field `{field}` must be finite"),
        });
    }
    Ok(v)
}

fn parse_zip(f: &mut Fields) -> Result<Option<ZipCoeffs>, NetlistError> {
    match f.remaining() {
        0 => Ok(None),
        n if n >= 6 => {
            let mut k = [0.0; 6];
            for (slot, name) in k
                .iter_mut()
                .zip(["k_ps", "k_pi", "k_pz", "k_qs", "k_qi", "k_qz"])
            {
                *slot = f.number(name)?;
            }
            Ok(Some(ZipCoeffs::from_array(k)))
        }
        _ => Err(NetlistError::Syntax {
            line: f.line,
            msg: "ZIP coefficients need six values".into(),
        }),
    }
}

/// A PQ condition may leave `P0 Q0` out; it then takes them from the load record.
struct PendingPq {
    line: usize,
    device: String,
    per_phase: bool,
    explicit: Option<(f64, f64, Option<ZipCoeffs>)>,
}

/// Parse a netlist document into a [`SystemSpec`].
pub fn parse_system(text: &str) -> Result<SystemSpec, NetlistError> {
    let mut spec = SystemSpec {
        base_mva: 100.0,
        nominal_freq: 60.0,
        init_steps_per_period: 25,
        buses: Vec::new(),
        branches: Vec::new(),
        generators: Vec::new(),
        motors: Vec::new(),
        loads: Vec::new(),
        conditions: Vec::new(),
        solver: SolverOptions::default(),
    };
    let mut section: Option<Section> = None;
    let mut bus_ids = HashSet::new();
    let mut branch_ids = HashSet::new();
    let mut device_ids = HashSet::new();
    let mut cond_ids = HashSet::new();
    let mut solver_keys = HashSet::new();
    // conditions keep file order; PQ entries are resolved once all loads are known
    let mut pending: Vec<Result<PfCondition, PendingPq>> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| NetlistError::Syntax {
                line,
                msg: "unterminated section header".into(),
            })?;
            section = Some(Section::from_header(name.trim()).ok_or_else(|| {
                NetlistError::UnknownSection {
                    line,
                    name: name.trim().to_string(),
                }
            })?);
            continue;
        }
        let Some(sec) = section else {
            return Err(NetlistError::Syntax {
                line,
                msg: "record outside of any section".into(),
            });
        };
        let mut f = Fields::new(line, content);
        match sec {
            Section::Bus => {
                let id = f.word("id")?.to_string();
                let kv = f.number("kv")?;
                let b_shunt = f.opt_number("b_shunt")?.unwrap_or(0.0);
                f.finish()?;
                if !bus_ids.insert(id.clone()) {
                    return Err(NetlistError::DuplicateId { line, id });
                }
                spec.buses.push(BusSpec { id, kv, b_shunt });
            }
            Section::Branch => {
                let id = f.word("id")?.to_string();
                let from = f.word("from")?.to_string();
                let to = f.word("to")?.to_string();
                let r = f.number("r")?;
                let x = f.number("x")?;
                let b = f.opt_number("b")?.unwrap_or(0.0);
                let ratio = f.opt_number("ratio")?.unwrap_or(1.0);
                f.finish()?;
                if !branch_ids.insert(id.clone()) {
                    return Err(NetlistError::DuplicateId { line, id });
                }
                spec.branches.push(BranchSpec {
                    id,
                    from,
                    to,
                    r,
                    x,
                    b,
                    ratio,
                });
            }
            Section::Gen => {
                let id = f.word("id")?.to_string();
                let bus = f.word("bus")?.to_string();
                let gen = GenSpec {
                    id: id.clone(),
                    bus,
                    mva: f.number("mva")?,
                    ra: f.number("ra")?,
                    xl: f.number("xl")?,
                    xd: f.number("xd")?,
                    xq: f.number("xq")?,
                    xd_t: f.number("xd'")?,
                    xq_t: f.number("xq'")?,
                    xd_st: f.number("xd''")?,
                    xq_st: f.number("xq''")?,
                    td0_t: f.number("td0'")?,
                    tq0_t: f.number("tq0'")?,
                    td0_st: f.number("td0''")?,
                    tq0_st: f.number("tq0''")?,
                    h: f.number("h")?,
                    d: f.opt_number("d")?.unwrap_or(0.0),
                };
                f.finish()?;
                if !device_ids.insert(id.clone()) {
                    return Err(NetlistError::DuplicateId { line, id });
                }
                spec.generators.push(gen);
            }
            Section::Motor => {
                let id = f.word("id")?.to_string();
                let bus = f.word("bus")?.to_string();
                let mut motor = MotorSpec {
                    id: id.clone(),
                    bus,
                    mva: f.number("mva")?,
                    rs: f.number("rs")?,
                    xls: f.number("xls")?,
                    rr: f.number("rr")?,
                    xlr: f.number("xlr")?,
                    xm: f.number("xm")?,
                    h: f.number("h")?,
                    d: 0.0,
                    connection: StatorConnection::FloatingY,
                };
                if f.remaining() > 0 {
                    motor.d = f.number("d")?;
                }
                if f.remaining() > 0 {
                    let conn = f.word("connection")?;
                    motor.connection = match conn.to_ascii_lowercase().as_str() {
                        "floating_y" | "y" => StatorConnection::FloatingY,
                        other => {
                            return Err(NetlistError::Syntax {
                                line,
                                msg: format!("unsupported stator connection `{other}`"),
                            })
                        }
                    };
                }
                f.finish()?;
                if !device_ids.insert(id.clone()) {
                    return Err(NetlistError::DuplicateId { line, id });
                }
                spec.motors.push(motor);
            }
            Section::Load => {
                let id = f.word("id")?.to_string();
                let bus = f.word("bus")?.to_string();
                let p = f.number("p")?;
                let q = f.number("q")?;
                let alloc_k = f.opt_number("k")?.unwrap_or(0.0);
                let zip = parse_zip(&mut f)?.unwrap_or_default();
                f.finish()?;
                if !(alloc_k.abs() < 1.0) {
                    return Err(NetlistError::Syntax {
                        line,
                        msg: format!("unbalance factor {alloc_k} outside (-1, 1)"),
                    });
                }
                if !device_ids.insert(id.clone()) {
                    return Err(NetlistError::DuplicateId { line, id });
                }
                spec.loads.push(LoadSpec {
                    id,
                    bus,
                    s_total: Complex64::new(p, q),
                    zip,
                    alloc_k,
                });
            }
            Section::PfCond => {
                let device = f.word("device")?.to_string();
                let kind = f.word("kind")?.to_ascii_lowercase();
                if !cond_ids.insert(device.clone()) {
                    return Err(NetlistError::DuplicateId { line, id: device });
                }
                let entry = match kind.as_str() {
                    "vtheta" => Ok(PfCondition {
                        device,
                        kind: PfKind::VTheta {
                            v: f.number("V")?,
                            theta: f.number("theta")?,
                        },
                    }),
                    "pv" => Ok(PfCondition {
                        device,
                        kind: PfKind::Pv {
                            p: f.number("P")?,
                            v: f.number("V")?,
                        },
                    }),
                    "motorp" => Ok(PfCondition {
                        device,
                        kind: PfKind::MotorP { p: f.number("P")? },
                    }),
                    "pq" => {
                        let scope = f.word("scope")?.to_ascii_lowercase();
                        let per_phase = match scope.as_str() {
                            "perphase" => true,
                            "posseq" => false,
                            other => {
                                return Err(NetlistError::Syntax {
                                    line,
                                    msg: format!("unknown PQ scope `{other}`"),
                                })
                            }
                        };
                        let explicit = match f.opt_number("P0")? {
                            Some(p0) => {
                                let q0 = f.number("Q0")?;
                                Some((p0, q0, parse_zip(&mut f)?))
                            }
                            None => None,
                        };
                        Err(PendingPq {
                            line,
                            device,
                            per_phase,
                            explicit,
                        })
                    }
                    other => {
                        return Err(NetlistError::Syntax {
                            line,
                            msg: format!("unknown condition kind `{other}`"),
                        })
                    }
                };
                f.finish()?;
                pending.push(entry);
            }
            Section::Solver => {
                let key = f.word("key")?.to_ascii_lowercase();
                if !solver_keys.insert(key.clone()) {
                    return Err(NetlistError::DuplicateId { line, id: key });
                }
                match key.as_str() {
                    "base_mva" => spec.base_mva = f.number("base_mva")?,
                    "freq" => spec.nominal_freq = f.number("freq")?,
                    "step_frac" => {
                        let n = f.number("step_frac")?;
                        if n < 1.0 || n.fract() != 0.0 {
                            return Err(NetlistError::Syntax {
                                line,
                                msg: "step_frac must be a positive integer".into(),
                            });
                        }
                        spec.init_steps_per_period = n as usize;
                    }
                    "tolerance" => spec.solver.tolerance = f.number("tolerance")?,
                    "maxiter" => spec.solver.maxiter = f.number("maxiter")? as usize,
                    "reltol" => spec.solver.reltol = f.number("reltol")?,
                    "eps" => spec.solver.eps = f.number("eps")?,
                    "relative_eps" => {
                        spec.solver.relative_eps = parse_flag(line, f.word("value")?)?
                    }
                    "m_max" => spec.solver.m_max = Some(f.number("m_max")? as usize),
                    "precondition" => {
                        let w = f.word("value")?;
                        spec.solver.precondition = if w.eq_ignore_ascii_case("identity") {
                            Preconditioning::Identity
                        } else if parse_flag(line, w)? {
                            Preconditioning::Broyden
                        } else {
                            Preconditioning::Off
                        };
                    }
                    other => {
                        return Err(NetlistError::Syntax {
                            line,
                            msg: format!("unknown solver key `{other}`"),
                        })
                    }
                }
                f.finish()?;
            }
        }
    }

    for entry in pending {
        let cond = match entry {
            Ok(c) => c,
            Err(pq) => resolve_pq(&spec, pq)?,
        };
        spec.conditions.push(cond);
    }

    if !spec
        .conditions
        .iter()
        .any(|c| matches!(c.kind, PfKind::VTheta { .. }))
    {
        return Err(NetlistError::NoAngleReference);
    }
    Ok(spec)
}

fn resolve_pq(spec: &SystemSpec, pq: PendingPq) -> Result<PfCondition, NetlistError> {
    let load = spec.loads.iter().find(|l| l.id == pq.device);
    let (p0, q0, zip) = match (pq.explicit, load) {
        (Some((p0, q0, zip)), load) => (p0, q0, zip.or(load.map(|l| l.zip)).unwrap_or_default()),
        (None, Some(load)) => (load.s_total.re, load.s_total.im, load.zip),
        (None, None) => {
            return Err(NetlistError::MissingField {
                line: pq.line,
                field: "P0",
            })
        }
    };
    let scope = if pq.per_phase {
        PqScope::PerPhase {
            alloc_k: load.map_or(0.0, |l| l.alloc_k),
        }
    } else {
        PqScope::PositiveSequence
    };
    Ok(PfCondition {
        device: pq.device,
        kind: PfKind::Pq { p0, q0, zip, scope },
    })
}

fn parse_flag(line: usize, w: &str) -> Result<bool, NetlistError> {
    match w.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(NetlistError::Syntax {
            line,
            msg: format!("`{other}` is not a boolean"),
        }),
    }
}

/// Serialize a [`SystemSpec`] back into the netlist format. All fields are
/// written explicitly so the output parses back to an identical spec.
pub fn write_system(spec: &SystemSpec) -> String {
    let mut out = String::new();
    let s = &spec.solver;
    let _ = writeln!(out, "[SOLVER]");
    let _ = writeln!(out, "base_mva {}", spec.base_mva);
    let _ = writeln!(out, "freq {}", spec.nominal_freq);
    let _ = writeln!(out, "step_frac {}", spec.init_steps_per_period);
    let _ = writeln!(out, "tolerance {}", s.tolerance);
    let _ = writeln!(out, "maxiter {}", s.maxiter);
    let _ = writeln!(out, "reltol {}", s.reltol);
    let _ = writeln!(out, "eps {}", s.eps);
    let _ = writeln!(out, "relative_eps {}", s.relative_eps);
    let pre = match s.precondition {
        Preconditioning::Off => "false",
        Preconditioning::Broyden => "true",
        Preconditioning::Identity => "identity",
    };
    let _ = writeln!(out, "precondition {pre}");
    if let Some(m) = s.m_max {
        let _ = writeln!(out, "m_max {m}");
    }

    let _ = writeln!(out, "\n[BUS]\n# id kv b_shunt");
    for b in &spec.buses {
        let _ = writeln!(out, "{} {} {}", b.id, b.kv, b.b_shunt);
    }
    let _ = writeln!(out, "\n[BRANCH]\n# id from to r x b ratio");
    for br in &spec.branches {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            br.id, br.from, br.to, br.r, br.x, br.b, br.ratio
        );
    }
    if !spec.generators.is_empty() {
        let _ = writeln!(
            out,
            "\n[GEN]\n# id bus mva ra xl xd xq xd' xq' xd'' xq'' td0' tq0' td0'' tq0'' h d"
        );
    }
    for g in &spec.generators {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            g.id,
            g.bus,
            g.mva,
            g.ra,
            g.xl,
            g.xd,
            g.xq,
            g.xd_t,
            g.xq_t,
            g.xd_st,
            g.xq_st,
            g.td0_t,
            g.tq0_t,
            g.td0_st,
            g.tq0_st,
            g.h,
            g.d
        );
    }
    if !spec.motors.is_empty() {
        let _ = writeln!(
            out,
            "\n[MOTOR]\n# id bus mva rs xls rr xlr xm h d connection"
        );
    }
    for m in &spec.motors {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} floating_y",
            m.id, m.bus, m.mva, m.rs, m.xls, m.rr, m.xlr, m.xm, m.h, m.d
        );
    }
    if !spec.loads.is_empty() {
        let _ = writeln!(
            out,
            "\n[LOAD]\n# id bus p q k k_ps k_pi k_pz k_qs k_qi k_qz"
        );
    }
    for l in &spec.loads {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            l.id,
            l.bus,
            l.s_total.re,
            l.s_total.im,
            l.alloc_k,
            join(&l.zip.as_array())
        );
    }
    let _ = writeln!(out, "\n[PFCOND]");
    for c in &spec.conditions {
        let _ = match c.kind {
            PfKind::VTheta { v, theta } => writeln!(out, "{} vtheta {} {}", c.device, v, theta),
            PfKind::Pv { p, v } => writeln!(out, "{} pv {} {}", c.device, p, v),
            PfKind::MotorP { p } => writeln!(out, "{} motorp {}", c.device, p),
            PfKind::Pq { p0, q0, zip, scope } => {
                let scope = match scope {
                    PqScope::PerPhase { .. } => "perphase",
                    PqScope::PositiveSequence => "posseq",
                };
                writeln!(
                    out,
                    "{} pq {} {} {} {}",
                    c.device,
                    scope,
                    p0,
                    q0,
                    join(&zip.as_array())
                )
            }
        };
    }
    out
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}
