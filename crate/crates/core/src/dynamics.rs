//! Concrete impulsive-system semantics.
//!
//! Between impulses the state follows `x' = f(x, u)` with `u` held constant over
//! each sampling period `tau`; at impulse instants the state is reset to
//! `g(x(t-), u(t))`. Impulse instants are multiples of `tau` and consecutive
//! impulses are separated by `p1..=p2` periods.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("state norm {norm:e} exceeded the blowup bound {bound:e}")]
    NumericalBlowup { norm: f64, bound: f64 },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("model '{model}' is missing parameter '{param}'")]
    MissingParameter { model: String, param: String },
    #[error("input signal has {len} values but the horizon needs {needed}")]
    SignalTooShort { len: usize, needed: usize },
    #[error("impulse schedule is not admissible: {0}")]
    InadmissibleSchedule(String),
}

/// Vector field and reset map of an impulsive system with a scalar input.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Writes `f(x, u)` into `dx`.
    fn flow(&self, x: &[f64], u: f64, dx: &mut [f64]);

    /// Writes `g(x, u)` into `out`.
    fn jump(&self, x: &[f64], u: f64, out: &mut [f64]);

    /// Exact solution of the flow after `t` time units, when one is known.
    fn exact_flow(&self, _x: &[f64], _u: f64, _t: f64) -> Option<Vec<f64>> {
        None
    }
}

/// Storage-delivery process: `x' = a x + c u`, `x+ = b x- + d u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageDelivery {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Dynamics for StorageDelivery {
    fn dim(&self) -> usize {
        1
    }

    fn flow(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        dx[0] = self.a * x[0] + self.c * u;
    }

    fn jump(&self, x: &[f64], u: f64, out: &mut [f64]) {
        out[0] = self.b * x[0] + self.d * u;
    }

    fn exact_flow(&self, x: &[f64], u: f64, t: f64) -> Option<Vec<f64>> {
        Some(vec![linear_closed_form(self.a, self.c, x[0], u, t)])
    }
}

/// `e^{a t} x + (c u / a)(e^{a t} - 1)`, with the `a -> 0` limit `x + c u t`.
pub fn linear_closed_form(a: f64, c: f64, x: f64, u: f64, t: f64) -> f64 {
    let growth = (a * t).exp();
    let forced = if a == 0.0 { t } else { (a * t).exp_m1() / a };
    growth * x + c * u * forced
}

/// Decoupled linear dynamics per coordinate, with the scalar input broadcast:
/// `x_i' = a_i x_i + c_i u`, `x_i+ = b_i x_i + d_i u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalLinear {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl Dynamics for DiagonalLinear {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn flow(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        for i in 0..self.a.len() {
            dx[i] = self.a[i] * x[i] + self.c[i] * u;
        }
    }

    fn jump(&self, x: &[f64], u: f64, out: &mut [f64]) {
        for i in 0..self.a.len() {
            out[i] = self.b[i] * x[i] + self.d[i] * u;
        }
    }

    fn exact_flow(&self, x: &[f64], u: f64, t: f64) -> Option<Vec<f64>> {
        Some(
            (0..self.a.len())
                .map(|i| linear_closed_form(self.a[i], self.c[i], x[i], u, t))
                .collect(),
        )
    }
}

/// Names accepted by [`model_from_registry`].
pub const REGISTERED_MODELS: [&str; 2] = ["storage-delivery", "pure-linear-nd"];

/// Looks up a built-in model by name.
///
/// `storage-delivery` takes `a`, `b`, `c`, `d`. `pure-linear-nd` takes `n` and
/// per-coordinate `a0..`, `b0..`, `c0..`, `d0..`.
pub fn model_from_registry(
    name: &str,
    params: &BTreeMap<String, f64>,
) -> Result<Arc<dyn Dynamics>, DynamicsError> {
    let get = |key: &str| {
        params.get(key).copied().ok_or_else(|| DynamicsError::MissingParameter {
            model: name.to_string(),
            param: key.to_string(),
        })
    };
    match name {
        "storage-delivery" => Ok(Arc::new(StorageDelivery {
            a: get("a")?,
            b: get("b")?,
            c: get("c")?,
            d: get("d")?,
        })),
        "pure-linear-nd" => {
            let n = get("n")?;
            if n < 1.0 || n.fract() != 0.0 {
                return Err(DynamicsError::InvalidSystem(format!("dimension n = {n}")));
            }
            let n = n as usize;
            let coeff = |p: &str| -> Result<Vec<f64>, DynamicsError> {
                (0..n).map(|i| get(&format!("{p}{i}"))).collect()
            };
            Ok(Arc::new(DiagonalLinear {
                a: coeff("a")?,
                b: coeff("b")?,
                c: coeff("c")?,
                d: coeff("d")?,
            }))
        }
        other => Err(DynamicsError::UnknownModel(other.to_string())),
    }
}

/// Fixed-step integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Largest substep; `None` means `tau / 10`.
    pub h_max: Option<f64>,
    pub blowup_bound: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { h_max: None, blowup_bound: 1e12 }
    }
}

/// Impulsive system with sampling period `tau` and dwell window `p1..=p2`.
#[derive(Debug, Clone)]
pub struct ImpulsiveSystem {
    dynamics: Arc<dyn Dynamics>,
    tau: f64,
    p1: usize,
    p2: usize,
    inputs: Vec<f64>,
    integrator: IntegratorConfig,
}

impl ImpulsiveSystem {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        tau: f64,
        p1: usize,
        p2: usize,
        inputs: Vec<f64>,
    ) -> Result<Self, DynamicsError> {
        if !(tau > 0.0) {
            return Err(DynamicsError::InvalidSystem(format!("tau = {tau} must be positive")));
        }
        if p1 < 1 || p1 > p2 {
            return Err(DynamicsError::InvalidSystem(format!("need 1 <= p1 <= p2, got {p1}, {p2}")));
        }
        if inputs.is_empty() {
            return Err(DynamicsError::InvalidSystem("input set is empty".into()));
        }
        Ok(Self { dynamics, tau, p1, p2, inputs, integrator: IntegratorConfig::default() })
    }

    pub fn with_integrator(mut self, integrator: IntegratorConfig) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
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

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn integrator(&self) -> IntegratorConfig {
        self.integrator
    }

    /// Largest `|u|` over the input set.
    pub fn input_bound(&self) -> f64 {
        self.inputs.iter().fold(0.0, |m, u| m.max(u.abs()))
    }

    fn h_max(&self) -> f64 {
        self.integrator.h_max.unwrap_or(self.tau / 10.0)
    }

    /// Flow for `duration` under constant input `u` using classical RK4 with
    /// `max(1, ceil(duration / h_max))` equal substeps.
    pub fn flow_map(&self, x: &[f64], u: f64, duration: f64) -> Result<Vec<f64>, DynamicsError> {
        let steps = ((duration / self.h_max()).ceil() as usize).max(1);
        self.flow_map_steps(x, u, duration, steps)
    }

    /// RK4 with an explicit number of substeps.
    pub fn flow_map_steps(
        &self,
        x: &[f64],
        u: f64,
        duration: f64,
        steps: usize,
    ) -> Result<Vec<f64>, DynamicsError> {
        let n = x.len();
        let h = duration / steps as f64;
        let f = &self.dynamics;
        let mut state = x.to_vec();
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        for _ in 0..steps {
            f.flow(&state, u, &mut k1);
            for i in 0..n {
                tmp[i] = state[i] + 0.5 * h * k1[i];
            }
            f.flow(&tmp, u, &mut k2);
            for i in 0..n {
                tmp[i] = state[i] + 0.5 * h * k2[i];
            }
            f.flow(&tmp, u, &mut k3);
            for i in 0..n {
                tmp[i] = state[i] + h * k3[i];
            }
            f.flow(&tmp, u, &mut k4);
            for i in 0..n {
                state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            let norm = state.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !(norm <= self.integrator.blowup_bound) {
                return Err(DynamicsError::NumericalBlowup {
                    norm,
                    bound: self.integrator.blowup_bound,
                });
            }
        }
        Ok(state)
    }

    pub fn jump_map(&self, x: &[f64], u: f64) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.dynamics.jump(x, u, &mut out);
        out
    }

    /// Simulates `horizon` sampling periods from `x0`.
    ///
    /// The sample at `k tau` holds `x(k tau -)` and `x(k tau)`; a jump at
    /// `k tau` is applied to the flowed state with the input active at `k tau`
    /// (the signal is held at its last value past its end).
    pub fn simulate(
        &self,
        x0: &[f64],
        signal: &InputSignal,
        schedule: &ImpulseSchedule,
        horizon: usize,
    ) -> Result<Trajectory, DynamicsError> {
        if signal.values.len() < horizon.max(1) {
            return Err(DynamicsError::SignalTooShort { len: signal.values.len(), needed: horizon.max(1) });
        }
        schedule.check(self.p1, self.p2)?;
        let mut samples = Vec::with_capacity(horizon + 1);
        samples.push(Sample {
            k: 0,
            time: 0.0,
            before: x0.to_vec(),
            after: x0.to_vec(),
            input: signal.value_at(0),
            jump_input: None,
            jumped: false,
        });
        let mut x = x0.to_vec();
        let mut next_jump = schedule.periods.iter().peekable();
        for k in 1..=horizon {
            let before = self.flow_map(&x, signal.value_at(k - 1), self.tau)?;
            let input = signal.value_at(k);
            let jumped = next_jump.next_if(|&&p| p == k as u64).is_some();
            let after = if jumped { self.jump_map(&before, input) } else { before.clone() };
            samples.push(Sample {
                k,
                time: k as f64 * self.tau,
                before,
                after: after.clone(),
                input,
                jump_input: jumped.then_some(input),
                jumped,
            });
            x = after;
        }
        Ok(Trajectory { samples })
    }
}

/// Piecewise-constant input, one value per sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    pub values: Vec<f64>,
}

impl InputSignal {
    pub fn constant(u: f64, periods: usize) -> Self {
        Self { values: vec![u; periods.max(1)] }
    }

    /// Value on `[k tau, (k+1) tau)`.
    pub fn value_at(&self, k: usize) -> f64 {
        self.values[k.min(self.values.len() - 1)]
    }
}

/// Impulse instants given as period indices `k` (time `k tau`), strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ImpulseSchedule {
    pub periods: Vec<u64>,
}

impl ImpulseSchedule {
    pub fn new(periods: Vec<u64>) -> Self {
        Self { periods }
    }

    pub fn times(&self, tau: f64) -> Vec<f64> {
        self.periods.iter().map(|&k| k as f64 * tau).collect()
    }

    pub fn contains(&self, k: u64) -> bool {
        self.periods.binary_search(&k).is_ok()
    }

    /// First impulse no earlier than `p1` periods, and every gap within `p1..=p2`.
    pub fn check(&self, p1: usize, p2: usize) -> Result<(), DynamicsError> {
        let (p1, p2) = (p1 as u64, p2 as u64);
        if let Some(&first) = self.periods.first() {
            if first < p1 {
                return Err(DynamicsError::InadmissibleSchedule(format!(
                    "first impulse at period {first} < p1 = {p1}"
                )));
            }
        }
        for w in self.periods.windows(2) {
            let gap = w[1].saturating_sub(w[0]);
            if gap < p1 || gap > p2 {
                return Err(DynamicsError::InadmissibleSchedule(format!(
                    "gap {gap} between periods {} and {} outside [{p1}, {p2}]",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn is_admissible(&self, p1: usize, p2: usize) -> bool {
        self.check(p1, p2).is_ok()
    }
}

/// Random admissible schedule on `1..=horizon` periods with i.i.d. uniform gaps in
/// `p1..=p2`; the first impulse is drawn the same way, as if one had just occurred at 0.
pub fn random_schedule(p1: usize, p2: usize, horizon: usize, seed: u64) -> ImpulseSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_schedule_with(&mut rng, p1, p2, horizon)
}

pub fn random_schedule_with<R: Rng>(rng: &mut R, p1: usize, p2: usize, horizon: usize) -> ImpulseSchedule {
    let mut periods = Vec::new();
    let mut t = 0u64;
    loop {
        t += rng.gen_range(p1..=p2) as u64;
        if t > horizon as u64 {
            break;
        }
        periods.push(t);
    }
    ImpulseSchedule { periods }
}

/// State and input record at one sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub k: usize,
    pub time: f64,
    /// `x(t-)`.
    pub before: Vec<f64>,
    /// `x(t)`; differs from `before` only when `jumped`.
    pub after: Vec<f64>,
    /// Input active on `[t, t + tau)`.
    pub input: f64,
    /// Input fed to the reset map at `t`.
    pub jump_input: Option<f64>,
    pub jumped: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn jump_periods(&self) -> Vec<usize> {
        self.samples.iter().filter(|s| s.jumped).map(|s| s.k).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn storage(a: f64, b: f64, c: f64, d: f64, p1: usize, p2: usize) -> ImpulsiveSystem {
        ImpulsiveSystem::new(Arc::new(StorageDelivery { a, b, c, d }), 0.2, p1, p2, vec![-1.0, 0.0, 1.0])
            .unwrap()
    }

    #[derive(Debug)]
    struct Zero;
    impl Dynamics for Zero {
        fn dim(&self) -> usize {
            2
        }
        fn flow(&self, _x: &[f64], _u: f64, dx: &mut [f64]) {
            dx.fill(0.0);
        }
        fn jump(&self, x: &[f64], _u: f64, out: &mut [f64]) {
            out.copy_from_slice(x);
        }
    }

    /// Scalar logistic-type field with a known solution, for order checks.
    #[derive(Debug)]
    struct Logistic;
    impl Dynamics for Logistic {
        fn dim(&self) -> usize {
            1
        }
        fn flow(&self, x: &[f64], u: f64, dx: &mut [f64]) {
            dx[0] = x[0] * (1.0 - x[0]) + 0.0 * u;
        }
        fn jump(&self, x: &[f64], _u: f64, out: &mut [f64]) {
            out[0] = x[0];
        }
    }

    #[test]
    fn flow_examples() {
        let sys = storage(-0.2, 0.9, 10.0, 10.0, 1, 5);
        assert!((sys.flow_map(&[30.0], 1.0, 0.2).unwrap()[0] - 30.784211216953537).abs() < 1e-9);
        assert!((sys.flow_map(&[30.0], 0.0, 0.2).unwrap()[0] - 28.823683174569695).abs() < 1e-9);
        let zero = ImpulsiveSystem::new(Arc::new(Zero), 0.2, 1, 1, vec![0.0]).unwrap();
        assert_eq!(zero.flow_map(&[1.5, -2.0], 0.0, 0.2).unwrap(), vec![1.5, -2.0]);
        assert_eq!(zero.jump_map(&[1.5, -2.0], 0.0), vec![1.5, -2.0]);
    }

    #[test]
    fn jump_examples() {
        let sys = storage(-0.2, 0.9, 10.0, 10.0, 1, 5);
        assert!((sys.jump_map(&[30.0], 0.0)[0] - 27.0).abs() < 1e-12);
        assert!((sys.jump_map(&[30.0], 1.0)[0] - 37.0).abs() < 1e-12);
    }

    #[test]
    fn blowup_detected() {
        let sys = storage(50.0, 0.9, 0.0, 0.0, 1, 5)
            .with_integrator(IntegratorConfig { h_max: None, blowup_bound: 1e3 });
        assert!(matches!(sys.flow_map(&[1.0], 0.0, 0.2), Err(DynamicsError::NumericalBlowup { .. })));
    }

    #[test]
    fn closed_form_limit_at_zero_rate() {
        assert_eq!(linear_closed_form(0.0, 2.0, 1.0, 3.0, 0.5), 4.0);
        let near = linear_closed_form(1e-12, 2.0, 1.0, 3.0, 0.5);
        assert!((near - 4.0).abs() < 1e-9);
    }

    #[test]
    fn simulate_single_jump() {
        let sys = storage(-0.2, 0.9, 10.0, 10.0, 1, 5);
        let traj = sys
            .simulate(&[30.0], &InputSignal::constant(0.0, 1), &ImpulseSchedule::new(vec![1]), 1)
            .unwrap();
        assert_eq!(traj.samples.len(), 2);
        assert_eq!(traj.samples[0].after, vec![30.0]);
        let s = &traj.samples[1];
        assert!(s.jumped);
        assert!((s.before[0] - 28.823683174569695).abs() < 1e-9);
        assert!((s.after[0] - 25.941314857112726).abs() < 1e-9);
    }

    #[test]
    fn simulate_horizon_zero() {
        let sys = storage(-0.2, 0.9, 10.0, 10.0, 1, 5);
        let traj = sys
            .simulate(&[30.0], &InputSignal::constant(1.0, 0), &ImpulseSchedule::default(), 0)
            .unwrap();
        assert_eq!(traj.samples.len(), 1);
    }

    #[test]
    fn simulate_without_jumps_is_flow_composition() {
        let sys = storage(-0.2, 0.9, 10.0, 10.0, 1, 5);
        let signal = InputSignal { values: vec![1.0, -1.0, 0.0, 1.0, 1.0] };
        let traj = sys.simulate(&[31.0], &signal, &ImpulseSchedule::default(), 5).unwrap();
        let mut x = vec![31.0];
        for k in 0..5 {
            x = sys.flow_map(&x, signal.values[k], 0.2).unwrap();
            assert_eq!(traj.samples[k + 1].after, x);
            assert!(!traj.samples[k + 1].jumped);
        }
    }

    #[test]
    fn simulate_rejects_bad_schedule() {
        let sys = storage(-0.2, 0.9, 10.0, 10.0, 2, 3);
        let r = sys.simulate(&[30.0], &InputSignal::constant(0.0, 5), &ImpulseSchedule::new(vec![1, 3]), 5);
        assert!(matches!(r, Err(DynamicsError::InadmissibleSchedule(_))));
    }

    #[test]
    fn forced_schedule() {
        assert_eq!(random_schedule(1, 1, 6, 42).periods, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn schedule_reproducible() {
        assert_eq!(random_schedule(1, 5, 200, 7), random_schedule(1, 5, 200, 7));
        assert_ne!(random_schedule(1, 5, 200, 7), random_schedule(1, 5, 200, 8));
    }

    #[test]
    fn schedule_draws_are_admissible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..10_000 {
            let p1 = 1 + i % 4;
            let p2 = p1 + i % 3;
            let s = random_schedule_with(&mut rng, p1, p2, 60);
            assert!(s.is_admissible(p1, p2));
            assert!(s.periods.first().is_none_or(|&t| t as usize <= p2));
            assert!(s.periods.last().is_none_or(|&t| t <= 60 && 60 - t < p2 as u64 + 1));
        }
    }

    #[test]
    fn registry_lookup() {
        let mut params = BTreeMap::new();
        params.insert("a".to_string(), -0.2);
        params.insert("b".to_string(), 0.9);
        params.insert("c".to_string(), 10.0);
        assert!(matches!(
            model_from_registry("storage-delivery", &params),
            Err(DynamicsError::MissingParameter { .. })
        ));
        params.insert("d".to_string(), 10.0);
        assert_eq!(model_from_registry("storage-delivery", &params).unwrap().dim(), 1);
        assert!(matches!(model_from_registry("nope", &params), Err(DynamicsError::UnknownModel(_))));
        let mut nd = BTreeMap::new();
        nd.insert("n".to_string(), 2.0);
        for p in ["a", "b", "c", "d"] {
            for i in 0..2 {
                nd.insert(format!("{p}{i}"), 0.5);
            }
        }
        assert_eq!(model_from_registry("pure-linear-nd", &nd).unwrap().dim(), 2);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let sys = ImpulsiveSystem::new(Arc::new(Logistic), 1.0, 1, 1, vec![0.0]).unwrap();
        let x0: f64 = 0.1;
        let t: f64 = 2.0;
        let exact = x0 * t.exp() / (1.0 - x0 + x0 * t.exp());
        let e1 = (sys.flow_map_steps(&[x0], 0.0, t, 8).unwrap()[0] - exact).abs();
        let e2 = (sys.flow_map_steps(&[x0], 0.0, t, 16).unwrap()[0] - exact).abs();
        let slope = (e1 / e2).log2();
        assert!((slope - 4.0).abs() < 0.3, "observed order {slope}");
    }

    proptest! {
        #[test]
        fn diagonal_matches_closed_form(x0 in -5.0f64..5.0, x1 in -5.0f64..5.0, u in -1.0f64..1.0) {
            let model = DiagonalLinear { a: vec![-0.3, 0.1], b: vec![0.5, 0.9], c: vec![2.0, -1.0], d: vec![0.0, 1.0] };
            let exact = model.exact_flow(&[x0, x1], u, 0.2).unwrap();
            let sys = ImpulsiveSystem::new(Arc::new(model), 0.2, 1, 2, vec![u]).unwrap();
            let got = sys.flow_map(&[x0, x1], u, 0.2).unwrap();
            for i in 0..2 {
                prop_assert!((got[i] - exact[i]).abs() < 1e-10);
            }
        }
    }
}
