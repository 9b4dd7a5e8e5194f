//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use impsym::abstraction::{build_symbolic, AbstractState, Scenario, SymbolicModel};
use impsym::certificates::{derive_asf, optimize_precision, to_max_form, CaseTag, FreeParameters, PsiChoice, Timing};
use impsym::config::{builtin_case, RunConfig};
use impsym::dynamics::{Dynamics, ImpulsiveSystem};
use impsym::geometry::{AxisBox, GridIndex};
use impsym::pipeline::{cmd_casestudy, derive_guarantee};
use impsym::synthesis::{check_invariance, closed_loop, synthesize_safety, SafetySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn case(n: u8) -> RunConfig {
    builtin_case(n, false).unwrap()
}

/// `(a, b, c, d)` of a built-in storage-delivery case.
fn coefficients(c: &RunConfig) -> (f64, f64, f64, f64) {
    (c.params["a"], c.params["b"], c.params["c"], c.params["d"])
}

/// `x e^{a t} + (c u / a)(e^{a t} - 1)`, or `x + c u t` when `a = 0`.
fn linear_solution(a: f64, c: f64, x: f64, u: f64, t: f64) -> f64 {
    if a == 0.0 {
        x + c * u * t
    } else {
        x * (a * t).exp() + c * u / a * ((a * t).exp() - 1.0)
    }
}

fn precision_case1() -> Outcome {
    let start = Instant::now();
    let g = derive_guarantee(&case(1)).unwrap();
    let elapsed = start.elapsed();
    // contraction max(e^{-kc tau}, kd), offset eta, psi = 0.99
    let sigma = (-0.2f64 * 0.2).exp().max(0.9);
    let oracle = 0.01 / ((1.0 - sigma) * 0.99);
    let pass = (g.eps_hat() - 0.25761).abs() <= 1e-4 && (g.eps_hat() - oracle).abs() <= 1e-12 && elapsed < Duration::from_secs(1);
    outcome(pass, format!("eps_hat = {:.6} (hand calculation {oracle:.6}, reference 0.25), {elapsed:.2?}", g.eps_hat()))
}

fn precision_bounds() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (n, bound) in [(2u8, 0.75), (3, 0.65)] {
        let c = case(n);
        let start = Instant::now();
        let (_, m) = optimize_precision(&c.certificate().unwrap(), c.timing(), c.eta, c.input_bound(), c.psi_choice()).unwrap();
        let elapsed = start.elapsed();
        pass &= m.eps_hat <= bound && elapsed < Duration::from_secs(5);
        detail.push(format!("case {n}: {:.6} <= {bound} in {elapsed:.2?}", m.eps_hat));
    }
    outcome(pass, detail.join("; "))
}

fn contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    let mut draws = 0;
    for n in 1..=3u8 {
        let c = case(n);
        let base = derive_guarantee(&c).unwrap();
        failures += usize::from(!(base.asf.lambda_f < 1.0));
        let tag = base.asf.case;
        let mut accepted = 0;
        while accepted < 1000 {
            let tau = rng.gen_range(0.01..1.0);
            let p1 = rng.gen_range(1..8usize);
            let p2 = p1 + rng.gen_range(0..6usize);
            let (kc, kd) = match tag {
                CaseTag::DD => (rng.gen_range(0.01..2.0), rng.gen_range(0.01..0.99)),
                CaseTag::FD => (rng.gen_range(0.01..2.0), rng.gen_range(1.0..3.0)),
                CaseTag::DF => (rng.gen_range(-2.0..-0.01), rng.gen_range(0.01..0.99)),
            };
            let free = FreeParameters { epsilon: Some(rng.gen_range(0.01..0.99)), delta: Some(p2 as f64 + rng.gen_range(0.01..10.0)) };
            let cert = impsym::certificates::StabilityCertificate::storage(-kc, kd, 1.0, 1.0);
            let Ok(asf) = derive_asf(&cert, Timing { tau, p1, p2 }, 0.01, free) else { continue };
            accepted += 1;
            failures += usize::from(!(asf.lambda_f < 1.0));
        }
        draws += accepted;
    }
    outcome(failures == 0, format!("{failures} failures over 3 cases and {draws} feasible draws"))
}

#[derive(Debug)]
struct Logistic;

impl Dynamics for Logistic {
    fn dim(&self) -> usize {
        1
    }
    fn flow(&self, x: &[f64], _u: f64, dx: &mut [f64]) {
        dx[0] = x[0] * (1.0 - x[0]);
    }
    fn jump(&self, x: &[f64], _u: f64, out: &mut [f64]) {
        out[0] = x[0];
    }
}

fn integrator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for n in 1..=3u8 {
        let c = case(n);
        let sys = c.system().unwrap();
        let (a, _, cc, _) = coefficients(&c);
        for _ in 0..1000 {
            let x = rng.gen_range(25.0..50.0);
            let u = [-1.0, 0.0, 1.0][rng.gen_range(0..3)];
            let got = sys.flow_map(&[x], u, c.tau).unwrap()[0];
            worst = worst.max((got - linear_solution(a, cc, x, u, c.tau)).abs());
        }
    }
    let sys = ImpulsiveSystem::new(Arc::new(Logistic), 1.0, 1, 1, vec![0.0]).unwrap();
    let (x0, t) = (0.1f64, 2.0f64);
    let exact = x0 * t.exp() / (1.0 - x0 + x0 * t.exp());
    let err = |steps| (sys.flow_map_steps(&[x0], 0.0, t, steps).unwrap()[0] - exact).abs();
    let slopes: Vec<f64> = [4usize, 8, 16].iter().map(|&n| (err(n) / err(2 * n)).log2()).collect();
    let slope = slopes.iter().sum::<f64>() / slopes.len() as f64;
    let pass = worst <= 1e-9 && (slope - 4.0).abs() <= 0.3;
    outcome(pass, format!("max error {worst:.2e} over 3000 draws, convergence slope {slope:.3}"))
}

/// Lattice points within `eta` of `center` (closed ball, one-dimensional).
fn ball(center: f64, eta: f64) -> Vec<f64> {
    let lo = ((center - eta) / eta).floor() as i64 - 1;
    let hi = ((center + eta) / eta).ceil() as i64 + 1;
    (lo..=hi).map(|k| k as f64 * eta).filter(|q| (q - center).abs() <= eta * (1.0 + 1e-9)).collect()
}

fn one_step_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    let mut checked = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for n in 1..=3u8 {
        let c = case(n);
        let g = derive_guarantee(&c).unwrap();
        let (a, b, cc, d) = coefficients(&c);
        let (lo, hi, eta) = (c.psi_l[0], c.psi_u[0], c.eta);
        let w = |x: f64, xh: f64, l: usize| g.asf.weighted((x - xh).abs(), l);
        for _ in 0..10_000 {
            let x = rng.gen_range(lo..=hi);
            let xh = (rng.gen_range(lo..=hi) / eta).round() * eta;
            let l = rng.gen_range(0..=c.p2);
            let u = [-1.0, 0.0, 1.0][rng.gen_range(0..3)];
            let before = w(x, xh, l);
            let bound = g.asf.sigma_tilde * before + g.asf.eps_tilde;
            let mut scenarios = Vec::new();
            if l < c.p2 {
                scenarios.push((linear_solution(a, cc, x, u, c.tau), linear_solution(a, cc, xh, u, c.tau), l + 1));
            }
            if l >= c.p1 {
                scenarios.push((b * x + d * u, b * xh + d * u, 0));
            }
            for (next, nominal, l_next) in scenarios {
                for q in ball(nominal, eta) {
                    checked += 1;
                    let excess = w(next, q, l_next) - bound;
                    worst = worst.max(excess);
                    if excess > 1e-12 {
                        violations += 1;
                    }
                }
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations over {checked} successor checks, worst excess {worst:.2e}"))
}

fn coarse_instance(p1: usize, p2: usize) -> (ImpulsiveSystem, SymbolicModel) {
    let mut c = case(1);
    c.eta = 1.0;
    c.p1 = p1;
    c.p2 = p2;
    let sys = c.system().unwrap();
    let model = build_symbolic(&sys, &c.grid_domain().unwrap()).unwrap();
    (sys, model)
}

type NaiveSuccessors = BTreeMap<(i64, usize, usize), (Option<BTreeSet<(i64, usize)>>, Option<BTreeSet<(i64, usize)>>)>;

/// Flow and jump successor sets of every (point, mode, input) by checking all
/// pairs of grid points; `None` marks a disabled scenario.
fn naive_successors(sys: &ImpulsiveSystem, lo: i64, hi: i64, eta: f64) -> NaiveSuccessors {
    let mut out = BTreeMap::new();
    for k in lo..=hi {
        let x = k as f64 * eta;
        for (i, &u) in sys.inputs().iter().enumerate() {
            let flowed = sys.flow_map(&[x], u, sys.tau()).unwrap()[0];
            let jumped = sys.jump_map(&[x], u)[0];
            let near = |center: f64| -> Vec<i64> {
                (lo..=hi).filter(|&j| (j as f64 * eta - center).abs() <= eta * (1.0 + 1e-9)).collect()
            };
            for l in 0..=sys.p2() {
                let flow = (l < sys.p2()).then(|| near(flowed).into_iter().map(|j| (j, l + 1)).collect());
                let jump = (l >= sys.p1()).then(|| near(jumped).into_iter().map(|j| (j, 0)).collect());
                out.insert((k, l, i), (flow, jump));
            }
        }
    }
    out
}

fn abstraction_oracle() -> Outcome {
    let (sys, model) = coarse_instance(1, 5);
    let naive = naive_successors(&sys, 25, 50, 1.0);
    let mut mismatches = 0;
    for ((k, l, i), (flow, jump)) in &naive {
        let s = AbstractState { point: model.point_id(&GridIndex(vec![*k])).unwrap(), mode: *l };
        let set = |sc| -> BTreeSet<(i64, usize)> {
            model.scenario_post(s, *i, sc).iter().map(|t| (model.points()[t.point].0[0], t.mode)).collect()
        };
        let blocked = flow.as_ref().is_some_and(|f| f.is_empty()) || jump.as_ref().is_some_and(|j| j.is_empty());
        let ok = set(Scenario::Flow) == flow.clone().unwrap_or_default()
            && set(Scenario::Jump) == jump.clone().unwrap_or_default()
            && model.is_blocked(s, *i) == blocked;
        mismatches += usize::from(!ok);
    }
    outcome(mismatches == 0 && naive.len() == 26 * 6 * 3, format!("{} state-input pairs, {mismatches} mismatches", naive.len()))
}

/// Winning domain and enabled inputs by repeated set filtering.
fn naive_fixed_point(naive: &NaiveSuccessors, safe: (f64, f64), n_inputs: usize) -> BTreeMap<(i64, usize), Vec<usize>> {
    let states: BTreeSet<(i64, usize)> = naive.keys().map(|&(k, l, _)| (k, l)).collect();
    let mut z: BTreeSet<(i64, usize)> = states.into_iter().filter(|&(k, _)| k as f64 >= safe.0 && k as f64 <= safe.1).collect();
    let good = |z: &BTreeSet<(i64, usize)>, k: i64, l: usize, i: usize| {
        let (flow, jump) = &naive[&(k, l, i)];
        let parts: Vec<&BTreeSet<(i64, usize)>> = [flow, jump].into_iter().flatten().collect();
        parts.iter().all(|p| !p.is_empty()) && parts.iter().all(|p| p.is_subset(z))
    };
    loop {
        let next: BTreeSet<_> = z.iter().copied().filter(|&(k, l)| (0..n_inputs).any(|i| good(&z, k, l, i))).collect();
        if next == z {
            break;
        }
        z = next;
    }
    z.iter().map(|&(k, l)| ((k, l), (0..n_inputs).filter(|&i| good(&z, k, l, i)).collect())).collect()
}

fn synthesis_oracle() -> Outcome {
    let mut mismatches = 0;
    let mut sizes = Vec::new();
    for (p1, p2, safe) in [(1, 5, (25.0, 50.0)), (1, 5, (28.0, 47.0)), (2, 3, (30.0, 45.0))] {
        let (sys, model) = coarse_instance(p1, p2);
        let naive = naive_fixed_point(&naive_successors(&sys, 25, 50, 1.0), safe, 3);
        let spec = SafetySpec::new(AxisBox::interval(safe.0, safe.1).unwrap(), 0.0, false);
        let got: BTreeMap<(i64, usize), Vec<usize>> = match synthesize_safety(&model, &spec) {
            Ok(ctrl) => ctrl.entries().map(|(q, l, v)| ((q.0[0], l), v.to_vec())).collect(),
            Err(_) => BTreeMap::new(),
        };
        mismatches += usize::from(got != naive);
        sizes.push(naive.len());
    }

    let c = case(1);
    let start = Instant::now();
    let sys = c.system().unwrap();
    let model = build_symbolic(&sys, &c.grid_domain().unwrap()).unwrap();
    let g = derive_guarantee(&c).unwrap();
    let ctrl = synthesize_safety(&model, &SafetySpec::new(c.safe_box().unwrap(), g.eps_hat(), true)).unwrap();
    let elapsed = start.elapsed();
    let bad = check_invariance(&model, &ctrl);
    let pass = mismatches == 0 && model.num_states() == 15006 && bad.is_empty() && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "coarse domains {sizes:?} with {mismatches} mismatches; case 1: {} of {} states winning, {} invariance failures, {elapsed:.2?}",
            ctrl.len(),
            model.num_states(),
            bad.len()
        ),
    )
}

fn closed_loop_safety() -> Outcome {
    let c = case(1);
    let sys = c.system().unwrap();
    let model = build_symbolic(&sys, &c.grid_domain().unwrap()).unwrap();
    let g = derive_guarantee(&c).unwrap();
    let ctrl = synthesize_safety(&model, &SafetySpec::new(c.safe_box().unwrap(), g.eps_hat(), true)).unwrap();
    let starts: Vec<&GridIndex> = ctrl.entries().filter(|&(_, l, _)| l == 0).map(|(q, _, _)| q).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut outside, mut samples, mut violations, mut errors) = (0usize, 0usize, 0usize, 0usize);
    let mut deviation = 0.0f64;
    for trial in 0..100u64 {
        let q = starts[rng.gen_range(0..starts.len())];
        let x0 = q.0[0] as f64 * c.eta + rng.gen_range(-0.45..0.45) * c.eta;
        match closed_loop(&sys, &ctrl, &g, &[x0], 200, trial) {
            Ok((traj, report)) => {
                for s in &traj.samples {
                    for x in [s.before[0], s.after[0]] {
                        samples += 1;
                        outside += usize::from(!(25.0..=50.0).contains(&x));
                    }
                }
                violations += report.violations;
                deviation = deviation.max(report.max_deviation);
            }
            Err(_) => errors += 1,
        }
    }
    let pass = outside == 0 && violations == 0 && errors == 0 && deviation <= g.eps_hat();
    outcome(
        pass,
        format!(
            "{samples} sampled states, {outside} outside [25, 50], max deviation {deviation:.6} <= {:.6}, {violations} violations, {errors} aborted runs",
            g.eps_hat()
        ),
    )
}

fn monotonicity() -> Outcome {
    let c = case(1);
    let cert = c.certificate().unwrap();
    let eps: Vec<f64> = [0.005, 0.01, 0.02]
        .iter()
        .map(|&eta| {
            let asf = derive_asf(&cert, c.timing(), eta, FreeParameters::default()).unwrap();
            to_max_form(&asf, 0.99, 1.0).unwrap().eps_hat
        })
        .collect();
    let (_, searched) = optimize_precision(&cert, c.timing(), 0.01, 1.0, PsiChoice::Fixed(0.99)).unwrap();
    let pass = eps[0] < eps[1] && eps[1] < eps[2] && searched.eps_hat == eps[1];
    outcome(pass, format!("eps_hat at eta 0.005, 0.01, 0.02: {:.6} < {:.6} < {:.6}", eps[0], eps[1], eps[2]))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_casestudy(&a, 11, false).unwrap();
    cmd_casestudy(&b, 11, false).unwrap();
    let mut files = 0;
    let mut differing = Vec::new();
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        files += 1;
        if fs::read(a.join(&name)).unwrap() != fs::read(b.join(&name)).unwrap() {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    let pass = differing.is_empty() && files == 10;
    outcome(pass, format!("{files} files compared, differing: {differing:?}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("precision reproduction, case 1", precision_case1),
        ("precision bounds, cases 2 and 3", precision_bounds),
        ("contraction of the simulation function", contraction),
        ("integrator against closed form and convergence order", integrator),
        ("one-step simulation-function decrease", one_step_property),
        ("abstraction against all-pairs enumeration", abstraction_oracle),
        ("synthesis against naive fixed point, invariance, runtime", synthesis_oracle),
        ("closed-loop safety", closed_loop_safety),
        ("precision monotone in grid spacing", monotonicity),
        ("case study determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += usize::from(!o.pass);
        println!("criterion {:>2} {}: {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
