//! Safety synthesis on the symbolic model and refinement to the concrete system.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

use crate::abstraction::{concrete_post, AbstractState, ConcreteState, Scenario, SymbolicModel};
use crate::certificates::{AsfParameters, MaxFormParameters, StabilityCertificate};
use crate::dynamics::{random_schedule, DynamicsError, ImpulsiveSystem, Sample, Trajectory};
use crate::geometry::{lattice_ball, round_to_grid, AxisBox, GridIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("safe set {0} is empty after deflation by {1}")]
    EmptySafeSet(String, f64),
    #[error("the winning domain is empty")]
    EmptyDomain,
    #[error("state {x:?} in mode {mode} is outside the controller domain")]
    OutsideDomain { x: Vec<f64>, mode: usize },
    #[error("relation violated at step {step}: {reason}")]
    RelationViolation { step: usize, reason: String },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("controller file, line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Safe range and how much it is shrunk before synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    pub safe_box: AxisBox,
    /// Output precision of the abstraction, recorded in the controller header.
    pub eps_hat: f64,
    pub deflation: f64,
}

impl SafetySpec {
    /// Deflates by `eps_hat` when `deflate` is set, so abstract safety implies concrete safety.
    pub fn new(safe_box: AxisBox, eps_hat: f64, deflate: bool) -> Self {
        Self { safe_box, eps_hat, deflation: if deflate { eps_hat } else { 0.0 } }
    }

    pub fn deflated(&self) -> Result<AxisBox, SynthesisError> {
        self.safe_box
            .deflate(self.deflation)
            .ok_or_else(|| SynthesisError::EmptySafeSet(self.safe_box.to_string(), self.deflation))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerHeader {
    pub dim: usize,
    pub eta: f64,
    pub tau: f64,
    pub p1: usize,
    pub p2: usize,
    pub eps_hat: f64,
    pub deflation: f64,
    pub inputs: Vec<f64>,
}

/// Permissive safety controller: every winning input per abstract state.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyController {
    header: ControllerHeader,
    entries: BTreeMap<(GridIndex, usize), Vec<usize>>,
}

/// Maximal controlled-invariant subset of the states whose output lies in the
/// deflated safe box.
pub fn synthesize_safety(model: &SymbolicModel, spec: &SafetySpec) -> Result<SafetyController, SynthesisError> {
    let safe = spec.deflated()?;
    let slack = crate::geometry::MEMBERSHIP_SLACK * model.eta();
    let n_inputs = model.inputs().len();
    let mut winning: Vec<bool> = (0..model.num_states())
        .map(|id| safe.contains_with_slack(&model.output(model.state(id)), slack))
        .collect();

    let keeps = |s: AbstractState, i: usize, z: &[bool]| {
        !model.is_blocked(s, i) && model.all_successor_ids(s, i, |t| z[t])
    };
    loop {
        let step = |id: usize| winning[id] && (0..n_inputs).any(|i| keeps(model.state(id), i, &winning));
        #[cfg(feature = "parallel")]
        let next: Vec<bool> = (0..winning.len()).into_par_iter().map(step).collect();
        #[cfg(not(feature = "parallel"))]
        let next: Vec<bool> = (0..winning.len()).map(step).collect();
        if next == winning {
            break;
        }
        winning = next;
    }

    let mut entries = BTreeMap::new();
    for (id, _) in winning.iter().enumerate().filter(|(_, &w)| w) {
        let s = model.state(id);
        let allowed: Vec<usize> = (0..n_inputs).filter(|&i| keeps(s, i, &winning)).collect();
        entries.insert((model.points()[s.point].clone(), s.mode), allowed);
    }
    if entries.is_empty() {
        return Err(SynthesisError::EmptyDomain);
    }
    Ok(SafetyController {
        header: ControllerHeader {
            dim: model.domain().dim(),
            eta: model.eta(),
            tau: model.tau(),
            p1: model.p1(),
            p2: model.p2(),
            eps_hat: spec.eps_hat,
            deflation: spec.deflation,
            inputs: model.inputs().to_vec(),
        },
        entries,
    })
}

/// (state, input) pairs of the controller whose successors are empty or leave its domain.
pub fn check_invariance(model: &SymbolicModel, controller: &SafetyController) -> Vec<(AbstractState, usize)> {
    let mut bad = Vec::new();
    for ((q, mode), inputs) in &controller.entries {
        let Some(point) = model.point_id(q) else {
            bad.extend(inputs.iter().map(|&i| (AbstractState { point: usize::MAX, mode: *mode }, i)));
            continue;
        };
        let s = AbstractState { point, mode: *mode };
        for &i in inputs {
            let post = model.post(s, i);
            if post.is_empty() || post.iter().any(|t| !controller.contains(&model.points()[t.point], t.mode)) {
                bad.push((s, i));
            }
        }
    }
    bad
}

impl SafetyController {
    pub fn header(&self) -> &ControllerHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, q: &GridIndex, mode: usize) -> bool {
        self.entries.contains_key(&(q.clone(), mode))
    }

    /// Winning input indices at `(q, mode)`, ascending.
    pub fn inputs_at(&self, q: &GridIndex, mode: usize) -> Option<&[usize]> {
        self.entries.get(&(q.clone(), mode)).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&GridIndex, usize, &[usize])> {
        self.entries.iter().map(|((q, m), v)| (q, *m, v.as_slice()))
    }

    /// Number of distinct grid points that are winning in at least one mode.
    pub fn point_count(&self) -> usize {
        let mut n = 0;
        let mut last: Option<&GridIndex> = None;
        for (q, _) in self.entries.keys() {
            if last != Some(q) {
                n += 1;
                last = Some(q);
            }
        }
        n
    }

    /// Grid points winning in every mode.
    pub fn all_mode_points(&self) -> Vec<GridIndex> {
        let modes = self.header.p2 + 1;
        let mut counts: BTreeMap<&GridIndex, usize> = BTreeMap::new();
        for (q, _) in self.entries.keys() {
            *counts.entry(q).or_default() += 1;
        }
        counts.into_iter().filter(|&(_, c)| c == modes).map(|(q, _)| q.clone()).collect()
    }

    pub fn quantize(&self, x: &[f64]) -> GridIndex {
        GridIndex(x.iter().map(|&v| round_to_grid(v, self.header.eta)).collect())
    }

    /// Serializes as text: `key value` header lines, then one sorted line per
    /// state `<grid-coords...> <mode> <input-index...>`.
    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(self.to_text().as_bytes())
    }

    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut s = String::new();
        let _ = writeln!(s, "impsym-controller 1");
        let _ = writeln!(s, "dim {}", h.dim);
        let _ = writeln!(s, "eta {}", h.eta);
        let _ = writeln!(s, "tau {}", h.tau);
        let _ = writeln!(s, "p1 {}", h.p1);
        let _ = writeln!(s, "p2 {}", h.p2);
        let _ = writeln!(s, "eps_hat {}", h.eps_hat);
        let _ = writeln!(s, "deflation {}", h.deflation);
        let _ = write!(s, "inputs");
        for u in &h.inputs {
            let _ = write!(s, " {u}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "states {}", self.entries.len());
        for ((q, mode), inputs) in &self.entries {
            for c in q.coords() {
                let _ = write!(s, "{c} ");
            }
            let _ = write!(s, "{mode}");
            for i in inputs {
                let _ = write!(s, " {i}");
            }
            let _ = writeln!(s);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, SynthesisError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let err = |line: usize, message: String| SynthesisError::Parse { line, message };
        let mut field = |key: &str| -> Result<(usize, String), SynthesisError> {
            let (n, l) = lines.next().ok_or_else(|| err(0, format!("missing '{key}' line")))?;
            let rest = l
                .strip_prefix(key)
                .filter(|r| r.is_empty() || r.starts_with(' '))
                .ok_or_else(|| err(n, format!("expected '{key}', found '{l}'")))?;
            Ok((n, rest.trim().to_string()))
        };
        fn num<T: std::str::FromStr>(n: usize, v: &str) -> Result<T, SynthesisError> {
            v.parse().map_err(|_| SynthesisError::Parse { line: n, message: format!("bad number '{v}'") })
        }
        let (n, v) = field("impsym-controller")?;
        if v != "1" {
            return Err(err(n, format!("unsupported version '{v}'")));
        }
        let (n, v) = field("dim")?;
        let dim: usize = num(n, &v)?;
        let (n, v) = field("eta")?;
        let eta = num(n, &v)?;
        let (n, v) = field("tau")?;
        let tau = num(n, &v)?;
        let (n, v) = field("p1")?;
        let p1 = num(n, &v)?;
        let (n, v) = field("p2")?;
        let p2 = num(n, &v)?;
        let (n, v) = field("eps_hat")?;
        let eps_hat = num(n, &v)?;
        let (n, v) = field("deflation")?;
        let deflation = num(n, &v)?;
        let (n, v) = field("inputs")?;
        let inputs = v.split_whitespace().map(|t| num(n, t)).collect::<Result<Vec<f64>, _>>()?;
        let (n, v) = field("states")?;
        let count: usize = num(n, &v)?;
        let mut entries = BTreeMap::new();
        for (n, l) in lines {
            if l.is_empty() {
                continue;
            }
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() < dim + 2 {
                return Err(err(n, "state line needs coordinates, mode and at least one input".into()));
            }
            let q = GridIndex(toks[..dim].iter().map(|t| num(n, t)).collect::<Result<_, _>>()?);
            let mode: usize = num(n, toks[dim])?;
            let allowed = toks[dim + 1..].iter().map(|t| num(n, t)).collect::<Result<Vec<usize>, _>>()?;
            if mode > p2 || allowed.iter().any(|&i| i >= inputs.len()) {
                return Err(err(n, "mode or input index out of range".into()));
            }
            entries.insert((q, mode), allowed);
        }
        if entries.len() != count {
            return Err(err(0, format!("header announces {count} states, found {}", entries.len())));
        }
        Ok(Self { header: ControllerHeader { dim, eta, tau, p1, p2, eps_hat, deflation, inputs }, entries })
    }
}

/// Input chosen for a concrete state: the first winning input of its quantized
/// abstract state. Returns `(input index, input value)`.
pub fn refine(controller: &SafetyController, state: &ConcreteState) -> Result<(usize, f64), SynthesisError> {
    let q = controller.quantize(&state.x);
    first_input(controller, &q, state.mode, &state.x)
}

fn first_input(controller: &SafetyController, q: &GridIndex, mode: usize, x: &[f64]) -> Result<(usize, f64), SynthesisError> {
    let i = controller
        .inputs_at(q, mode)
        .and_then(|v| v.first().copied())
        .ok_or_else(|| SynthesisError::OutsideDomain { x: x.to_vec(), mode })?;
    Ok((i, controller.header.inputs[i]))
}

/// Certificate and derived parameters that together define the simulation relation.
#[derive(Debug, Clone)]
pub struct Guarantee {
    pub cert: StabilityCertificate,
    pub asf: AsfParameters,
    pub max_form: MaxFormParameters,
}

impl Guarantee {
    /// Weighted simulation-function value of a concrete/abstract pair in mode `l`.
    pub fn value(&self, x: &[f64], x_hat: &[f64], mode: usize) -> f64 {
        self.asf.weighted(self.cert.value(x, x_hat), mode)
    }

    pub fn level(&self) -> f64 {
        self.max_form.relation_level()
    }

    pub fn eps_hat(&self) -> f64 {
        self.max_form.eps_hat
    }
}

pub const RELATION_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelationReport {
    pub pairs: usize,
    pub rejected: usize,
    pub skipped_blocked: usize,
    pub max_deviation: f64,
    pub max_value: f64,
    pub level: f64,
    pub eps_hat: f64,
    pub violations: usize,
}

impl RelationReport {
    fn new(g: &Guarantee) -> Self {
        Self { level: g.level(), eps_hat: g.eps_hat(), ..Default::default() }
    }

    fn record(&mut self, deviation: f64, value: f64) -> bool {
        self.pairs += 1;
        self.max_deviation = self.max_deviation.max(deviation);
        self.max_value = self.max_value.max(value);
        let ok = deviation <= self.eps_hat + RELATION_SLACK && value <= self.level + RELATION_SLACK;
        if !ok {
            self.violations += 1;
        }
        ok
    }
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Tracks the abstract partner of a concrete run inside the controller domain.
struct Pairing<'a> {
    controller: &'a SafetyController,
    eta: f64,
}

impl Pairing<'_> {
    /// Grid point in the closed `eta`-ball of `nominal` that is winning in `mode`
    /// and nearest to `target` (first in lexicographic order on ties).
    fn successor(&self, nominal: &[f64], target: &[f64], mode: usize) -> Option<GridIndex> {
        let mut best: Option<(f64, GridIndex)> = None;
        for q in lattice_ball(nominal, self.eta, self.eta) {
            if !self.controller.contains(&q, mode) {
                continue;
            }
            let d = inf_dist(&q.decode(self.eta), target);
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, q));
            }
        }
        best.map(|(_, q)| q)
    }
}

/// Concrete run under the refined controller and a random admissible impulse
/// schedule, paired step by step with an abstract run of the symbolic model.
///
/// The input at each step is the first winning input of the paired abstract
/// state; the abstract successor is the winning grid point of the nominal
/// `eta`-ball nearest to the concrete successor. Every pair is checked against
/// the relation level and the output precision.
pub fn closed_loop(
    system: &ImpulsiveSystem,
    controller: &SafetyController,
    guarantee: &Guarantee,
    x0: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<(Trajectory, RelationReport), SynthesisError> {
    let eta = controller.header.eta;
    let tau = system.tau();
    let pairing = Pairing { controller, eta };
    let schedule = random_schedule(system.p1(), system.p2(), horizon, seed);
    let mut report = RelationReport::new(guarantee);

    let mut x = x0.to_vec();
    let mut q = controller.quantize(x0);
    let mut mode = 0usize;
    let (_, mut u) = refine(controller, &ConcreteState { x: x.clone(), mode })?;
    let check = |report: &mut RelationReport, x: &[f64], q: &GridIndex, mode: usize, step: usize| {
        let xh = q.decode(eta);
        if report.record(inf_dist(x, &xh), guarantee.value(x, &xh, mode)) {
            Ok(())
        } else {
            Err(SynthesisError::RelationViolation {
                step,
                reason: format!(
                    "pair x = {x:?}, x_hat = {xh:?}, mode {mode}: deviation {} (bound {}), value {} (level {})",
                    inf_dist(x, &xh),
                    report.eps_hat,
                    guarantee.value(x, &xh, mode),
                    report.level
                ),
            })
        }
    };
    check(&mut report, &x, &q, mode, 0)?;

    let mut samples = Vec::with_capacity(horizon + 1);
    samples.push(Sample { k: 0, time: 0.0, before: x.clone(), after: x.clone(), input: u, jump_input: None, jumped: false });
    for k in 1..=horizon {
        let before = system.flow_map(&x, u, tau)?;
        let nominal = system.flow_map(&q.decode(eta), u, tau)?;
        mode += 1;
        q = pairing.successor(&nominal, &before, mode).ok_or_else(|| SynthesisError::RelationViolation {
            step: k,
            reason: format!("no winning grid point within eta of the flow nominal {nominal:?}"),
        })?;
        check(&mut report, &before, &q, mode, k)?;

        let mut after = before.clone();
        let mut jump_input = None;
        let jumped = schedule.contains(k as u64);
        if jumped {
            let (_, uj) = first_input(controller, &q, mode, &before)?;
            after = system.jump_map(&before, uj);
            let nominal = system.jump_map(&q.decode(eta), uj);
            mode = 0;
            q = pairing.successor(&nominal, &after, mode).ok_or_else(|| SynthesisError::RelationViolation {
                step: k,
                reason: format!("no winning grid point within eta of the jump nominal {nominal:?}"),
            })?;
            check(&mut report, &after, &q, mode, k)?;
            jump_input = Some(uj);
        }
        u = first_input(controller, &q, mode, &after)?.1;
        samples.push(Sample { k, time: k as f64 * tau, before, after: after.clone(), input: u, jump_input, jumped });
        x = after;
    }
    Ok((Trajectory { samples }, report))
}

/// Sampled check of the alternating simulation relation: pairs with value at
/// most the relation level must, for every non-blocked abstract input, have
/// each concrete successor matched by an abstract successor that stays in the
/// relation and within the output precision.
pub fn validate_relation(
    system: &ImpulsiveSystem,
    model: &SymbolicModel,
    guarantee: &Guarantee,
    samples: usize,
    seed: u64,
) -> Result<RelationReport, SynthesisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = RelationReport::new(guarantee);
    let spread = 1.2 * guarantee.eps_hat();
    let n_inputs = model.inputs().len();
    for _ in 0..samples {
        let s = AbstractState { point: rng.gen_range(0..model.points().len()), mode: rng.gen_range(0..model.num_modes()) };
        let xh = model.output(s);
        let x: Vec<f64> = xh.iter().map(|c| c + rng.gen_range(-spread..=spread)).collect();
        if guarantee.value(&x, &xh, s.mode) > report.level {
            report.rejected += 1;
            continue;
        }
        report.record(inf_dist(&x, &xh), guarantee.value(&x, &xh, s.mode));
        for i in 0..n_inputs {
            if model.is_blocked(s, i) {
                report.skipped_blocked += 1;
                continue;
            }
            let u = model.inputs()[i];
            for next in concrete_post(system, &ConcreteState { x: x.clone(), mode: s.mode }, u)? {
                let scenario = if next.mode == 0 { Scenario::Jump } else { Scenario::Flow };
                let best = model
                    .scenario_post(s, i, scenario)
                    .into_iter()
                    .map(|t| {
                        let out = model.output(t);
                        (guarantee.value(&next.x, &out, t.mode), inf_dist(&next.x, &out))
                    })
                    .filter(|&(v, d)| v <= report.level + RELATION_SLACK && d <= report.eps_hat + RELATION_SLACK)
                    .fold(None, |acc: Option<(f64, f64)>, c| match acc {
                        Some(a) if a.0 <= c.0 => Some(a),
                        _ => Some(c),
                    });
                match best {
                    Some((v, d)) => {
                        report.pairs += 1;
                        report.max_value = report.max_value.max(v);
                        report.max_deviation = report.max_deviation.max(d);
                    }
                    None => report.violations += 1,
                }
            }
        }
    }
    Ok(report)
}
