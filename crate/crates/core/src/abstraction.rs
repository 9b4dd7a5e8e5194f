//! Finite symbolic model over grid points and the mode counter.
//!
//! An abstract state is a grid point paired with the number `l` of sampling
//! periods since the last impulse. From `(x_hat, l)` under input `u`:
//!
//! - flow (`l < p2`): every grid point within `eta` of the flowed point, with mode `l + 1`;
//! - jump (`p1 <= l`): every grid point within `eta` of `g(x_hat, u)`, with mode `0`.
//!
//! Grid points outside the domain are dropped. A (state, input) pair where an
//! enabled scenario has no successor left is blocked and has no successors.

use std::io::{self, Write};

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{DynamicsError, ImpulsiveSystem};
use crate::geometry::{GeometryError, GridDomain, GridIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbstractionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("state dimension {system} does not match domain dimension {domain}")]
    DimensionMismatch { system: usize, domain: usize },
}

/// Grid point (dense id into [`SymbolicModel::points`]) and mode counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AbstractState {
    pub point: usize,
    pub mode: usize,
}

/// Concrete sampled state and mode counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteState {
    pub x: Vec<f64>,
    pub mode: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    Flow,
    Jump,
}

/// Compressed successor lists, one run per (point, input) pair.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct SuccessorTable {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl SuccessorTable {
    fn from_runs(runs: Vec<Vec<u32>>) -> Self {
        let mut offsets = Vec::with_capacity(runs.len() + 1);
        offsets.push(0);
        let mut targets = Vec::with_capacity(runs.iter().map(Vec::len).sum());
        for run in runs {
            targets.extend(run);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    fn run(&self, pair: usize) -> &[u32] {
        &self.targets[self.offsets[pair]..self.offsets[pair + 1]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicModel {
    domain: GridDomain,
    points: Vec<GridIndex>,
    inputs: Vec<f64>,
    tau: f64,
    p1: usize,
    p2: usize,
    flow: SuccessorTable,
    jump: SuccessorTable,
}

/// Builds the symbolic model of `system` on the grid of `domain`.
pub fn build_symbolic(system: &ImpulsiveSystem, domain: &GridDomain) -> Result<SymbolicModel, AbstractionError> {
    if system.dim() != domain.dim() {
        return Err(AbstractionError::DimensionMismatch { system: system.dim(), domain: domain.dim() });
    }
    let points = domain.enumerate()?;
    let inputs = system.inputs().to_vec();
    let eta = domain.eta();
    let pairs = points.len() * inputs.len();

    let successors = |pair: usize| -> Result<(Vec<u32>, Vec<u32>), DynamicsError> {
        let (p, i) = (pair / inputs.len(), pair % inputs.len());
        let x_hat = domain.decode(&points[p]);
        let u = inputs[i];
        let to_ids = |ball: Vec<GridIndex>| -> Vec<u32> {
            ball.iter()
                .map(|q| points.binary_search(q).expect("ball points lie in the domain") as u32)
                .collect()
        };
        let flowed = system.flow_map(&x_hat, u, system.tau())?;
        let jumped = system.jump_map(&x_hat, u);
        Ok((to_ids(domain.ball_points(&flowed, eta)), to_ids(domain.ball_points(&jumped, eta))))
    };

    #[cfg(feature = "parallel")]
    let runs: Result<Vec<_>, DynamicsError> = (0..pairs).into_par_iter().map(successors).collect();
    #[cfg(not(feature = "parallel"))]
    let runs: Result<Vec<_>, DynamicsError> = (0..pairs).map(successors).collect();

    let (flow_runs, jump_runs): (Vec<_>, Vec<_>) = runs?.into_iter().unzip();
    Ok(SymbolicModel {
        domain: domain.clone(),
        points,
        inputs,
        tau: system.tau(),
        p1: system.p1(),
        p2: system.p2(),
        flow: SuccessorTable::from_runs(flow_runs),
        jump: SuccessorTable::from_runs(jump_runs),
    })
}

impl SymbolicModel {
    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn eta(&self) -> f64 {
        self.domain.eta()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn p1(&self) -> usize {
        self.p1
    }

    pub fn p2(&self) -> usize {
        self.p2
    }

    pub fn points(&self) -> &[GridIndex] {
        &self.points
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn num_modes(&self) -> usize {
        self.p2 + 1
    }

    pub fn num_states(&self) -> usize {
        self.points.len() * self.num_modes()
    }

    /// Dense state id `point * (p2 + 1) + mode`.
    pub fn state_id(&self, s: AbstractState) -> usize {
        s.point * self.num_modes() + s.mode
    }

    pub fn state(&self, id: usize) -> AbstractState {
        AbstractState { point: id / self.num_modes(), mode: id % self.num_modes() }
    }

    pub fn states(&self) -> impl Iterator<Item = AbstractState> + '_ {
        (0..self.num_states()).map(|id| self.state(id))
    }

    pub fn point_id(&self, q: &GridIndex) -> Option<usize> {
        self.points.binary_search(q).ok()
    }

    /// Output map: the grid point's coordinates.
    pub fn output(&self, s: AbstractState) -> Vec<f64> {
        self.domain.decode(&self.points[s.point])
    }

    pub fn flow_enabled(&self, mode: usize) -> bool {
        mode < self.p2
    }

    pub fn jump_enabled(&self, mode: usize) -> bool {
        mode >= self.p1 && mode <= self.p2
    }

    fn pair(&self, point: usize, input: usize) -> usize {
        point * self.inputs.len() + input
    }

    /// Point-level successors of one scenario, independent of the mode.
    pub fn scenario_points(&self, point: usize, input: usize, scenario: Scenario) -> &[u32] {
        let pair = self.pair(point, input);
        match scenario {
            Scenario::Flow => self.flow.run(pair),
            Scenario::Jump => self.jump.run(pair),
        }
    }

    /// Successors of one scenario with their modes, or empty if the scenario is disabled in this mode.
    pub fn scenario_post(&self, s: AbstractState, input: usize, scenario: Scenario) -> Vec<AbstractState> {
        let (enabled, mode) = match scenario {
            Scenario::Flow => (self.flow_enabled(s.mode), s.mode + 1),
            Scenario::Jump => (self.jump_enabled(s.mode), 0),
        };
        if !enabled {
            return Vec::new();
        }
        self.scenario_points(s.point, input, scenario)
            .iter()
            .map(|&p| AbstractState { point: p as usize, mode })
            .collect()
    }

    pub fn is_blocked(&self, s: AbstractState, input: usize) -> bool {
        (self.flow_enabled(s.mode) && self.scenario_points(s.point, input, Scenario::Flow).is_empty())
            || (self.jump_enabled(s.mode) && self.scenario_points(s.point, input, Scenario::Jump).is_empty())
    }

    /// Successor set sorted by (point, mode); empty for blocked pairs.
    pub fn post(&self, s: AbstractState, input: usize) -> Vec<AbstractState> {
        if self.is_blocked(s, input) {
            return Vec::new();
        }
        let mut out = self.scenario_post(s, input, Scenario::Flow);
        out.extend(self.scenario_post(s, input, Scenario::Jump));
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Calls `visit` on every successor id of a non-blocked pair until it returns `false`.
    pub(crate) fn all_successor_ids(&self, s: AbstractState, input: usize, mut visit: impl FnMut(usize) -> bool) -> bool {
        let modes = self.num_modes();
        if self.flow_enabled(s.mode) {
            for &p in self.scenario_points(s.point, input, Scenario::Flow) {
                if !visit(p as usize * modes + s.mode + 1) {
                    return false;
                }
            }
        }
        if self.jump_enabled(s.mode) {
            for &p in self.scenario_points(s.point, input, Scenario::Jump) {
                if !visit(p as usize * modes) {
                    return false;
                }
            }
        }
        true
    }

    /// All blocked (state, input) pairs in state order.
    pub fn blocked_pairs(&self) -> Vec<(AbstractState, usize)> {
        self.states()
            .flat_map(|s| (0..self.inputs.len()).map(move |i| (s, i)))
            .filter(|&(s, i)| self.is_blocked(s, i))
            .collect()
    }

    pub fn transition_count(&self) -> usize {
        self.states()
            .flat_map(|s| (0..self.inputs.len()).map(move |i| (s, i)))
            .map(|(s, i)| self.post(s, i).len())
            .sum()
    }

    /// Text dump of the successor table.
    ///
    /// Header lines `key value`, then one line per (point, input):
    /// `<coords...> <input-index> flow <ids...> jump <ids...>` with dense point ids.
    pub fn write_dump(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "impsym-model 1")?;
        writeln!(w, "dim {}", self.domain.dim())?;
        writeln!(w, "points {}", self.points.len())?;
        writeln!(w, "inputs {}", self.inputs.len())?;
        writeln!(w, "eta {}", self.eta())?;
        writeln!(w, "tau {}", self.tau)?;
        writeln!(w, "p1 {}", self.p1)?;
        writeln!(w, "p2 {}", self.p2)?;
        write!(w, "input-values")?;
        for u in &self.inputs {
            write!(w, " {u}")?;
        }
        writeln!(w)?;
        for (p, q) in self.points.iter().enumerate() {
            for i in 0..self.inputs.len() {
                for c in q.coords() {
                    write!(w, "{c} ")?;
                }
                write!(w, "{i} flow")?;
                for id in self.scenario_points(p, i, Scenario::Flow) {
                    write!(w, " {id}")?;
                }
                write!(w, " jump")?;
                for id in self.scenario_points(p, i, Scenario::Jump) {
                    write!(w, " {id}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Successors of a concrete state: the flowed state when `l < p2`, and the
/// reset state when `p1 <= l <= p2`.
pub fn concrete_post(system: &ImpulsiveSystem, state: &ConcreteState, u: f64) -> Result<Vec<ConcreteState>, DynamicsError> {
    let mut out = Vec::with_capacity(2);
    if state.mode < system.p2() {
        out.push(ConcreteState { x: system.flow_map(&state.x, u, system.tau())?, mode: state.mode + 1 });
    }
    if state.mode >= system.p1() && state.mode <= system.p2() {
        out.push(ConcreteState { x: system.jump_map(&state.x, u), mode: 0 });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NonblockingReport {
    pub total_states: usize,
    /// States where every input is blocked.
    pub blocking_states: Vec<AbstractState>,
    pub blocked_pairs: usize,
}

impl NonblockingReport {
    pub fn is_nonblocking(&self) -> bool {
        self.blocking_states.is_empty()
    }
}

pub fn check_nonblocking(model: &SymbolicModel) -> NonblockingReport {
    let n_inputs = model.inputs().len();
    let mut report = NonblockingReport { total_states: model.num_states(), ..Default::default() };
    for s in model.states() {
        let blocked = (0..n_inputs).filter(|&i| model.is_blocked(s, i)).count();
        report.blocked_pairs += blocked;
        if blocked == n_inputs {
            report.blocking_states.push(s);
        }
    }
    report
}
