//! End-to-end commands behind the command-line tool.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::abstraction::{build_symbolic, check_nonblocking, AbstractionError, NonblockingReport, SymbolicModel};
use crate::certificates::{
    check_dwell, derive_asf, optimize_precision, psi_lattice, to_max_form, verify_certificate, AsfError, CaseTag,
    CERTIFICATE_TOLERANCE,
};
use crate::config::{builtin_case, ConfigError, RunConfig};
use crate::geometry::GeometryError;
use crate::synthesis::{closed_loop, synthesize_safety, Guarantee, SafetyController, SafetySpec, SynthesisError};

/// Reminder attached to every synthesis and simulation summary.
pub const SAMPLING_NOTE: &str = "note: safety is guaranteed at sampling instants only; \
inter-sample excursions of the flow are not checked";
pub const DEFLATION_NOTE: &str = "note: synthesis uses the safe set shrunk by eps_hat so that abstract \
safety implies concrete safety";

pub const CERTIFY_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dwell-time condition fails: {0}")]
    Dwell(String),
    #[error(transparent)]
    Asf(#[from] AsfError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("controller does not match the configuration: {0}")]
    ControllerMismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PipelineError {
    /// Process exit code: 2 configuration, 3 dwell or feasibility, 4 empty winning domain, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::ControllerMismatch(_) => 2,
            PipelineError::Asf(AsfError::InvalidArgument(_)) => 2,
            PipelineError::Dwell(_) | PipelineError::Asf(_) => 3,
            PipelineError::Synthesis(SynthesisError::EmptyDomain | SynthesisError::EmptySafeSet(..)) => 4,
            PipelineError::Abstraction(AbstractionError::Geometry(GeometryError::DomainTooLarge { .. })) => 2,
            _ => 1,
        }
    }
}

fn dwell_margins(kc: f64, kd: f64, tau: f64, p1: usize, p2: usize) -> (f64, f64) {
    (kd.ln() - kc * tau * p1 as f64, kd.ln() - kc * tau * p2 as f64)
}

#[derive(Debug, Clone)]
pub struct CertifyOutcome {
    pub text: String,
    pub dwell_ok: bool,
    pub certificate_ok: bool,
}

impl CertifyOutcome {
    pub fn passed(&self) -> bool {
        self.dwell_ok && self.certificate_ok
    }

    /// The report, or an error for a failed check.
    pub fn into_result(self) -> Result<String, PipelineError> {
        if self.passed() {
            Ok(self.text)
        } else {
            Err(PipelineError::Dwell(self.text))
        }
    }
}

/// Sampled certificate check plus the dwell condition, as a `key = value` report.
pub fn cmd_certify(config: &RunConfig) -> Result<CertifyOutcome, PipelineError> {
    let system = config.system()?;
    let cert = config.certificate()?;
    let region = config.grid_domain()?.boxes()[0].clone();
    let report = verify_certificate(&system, &cert, &region, CERTIFY_SAMPLES, config.run.seed);
    let (kc, kd) = (cert.kappa_c, cert.kappa_d);
    let dwell_ok = check_dwell(kc, kd, config.tau, config.p1, config.p2);
    let (m1, m2) = dwell_margins(kc, kd, config.tau, config.p1, config.p2);

    let mut s = String::new();
    let _ = writeln!(s, "model = {}", config.model);
    let _ = writeln!(s, "kappa_c = {kc}");
    let _ = writeln!(s, "kappa_d = {kd}");
    match CaseTag::classify(kc, kd) {
        Ok(tag) => {
            let _ = writeln!(s, "case = {tag}");
        }
        Err(e) => {
            let _ = writeln!(s, "case = excluded ({e})");
        }
    }
    let _ = writeln!(s, "dwell_margin_p1 = {m1}");
    let _ = writeln!(s, "dwell_margin_p2 = {m2}");
    let _ = writeln!(s, "dwell = {}", if dwell_ok { "pass" } else { "fail" });
    let _ = writeln!(s, "certificate_samples = {}", report.samples);
    let _ = writeln!(s, "certificate_tolerance = {}", report.tolerance);
    let _ = writeln!(s, "violation_sandwich_lower = {}", report.sandwich_lower);
    let _ = writeln!(s, "violation_sandwich_upper = {}", report.sandwich_upper);
    let _ = writeln!(s, "violation_dissipation = {}", report.dissipation);
    let _ = writeln!(s, "violation_jump = {}", report.jump);
    let _ = writeln!(s, "violation_triangle = {}", report.triangle);
    let _ = writeln!(s, "certificate = {}", if report.passed() { "pass" } else { "fail" });
    debug_assert_eq!(report.tolerance, CERTIFICATE_TOLERANCE);
    Ok(CertifyOutcome { text: s, dwell_ok, certificate_ok: report.passed() })
}

/// Certificate, simulation-function parameters and precision for a config.
///
/// Free constants left at `auto` are optimized; explicit ones are used as given.
pub fn derive_guarantee(config: &RunConfig) -> Result<Guarantee, PipelineError> {
    let cert = config.certificate()?;
    let timing = config.timing();
    if !check_dwell(cert.kappa_c, cert.kappa_d, config.tau, config.p1, config.p2) {
        let (m1, m2) = dwell_margins(cert.kappa_c, cert.kappa_d, config.tau, config.p1, config.p2);
        return Err(PipelineError::Dwell(format!("margins {m1} (p1) and {m2} (p2) must both be negative")));
    }
    let r = config.input_bound();
    let fixed = match CaseTag::classify(cert.kappa_c, cert.kappa_d)? {
        CaseTag::DD => false,
        CaseTag::FD => config.asf.epsilon.is_some(),
        CaseTag::DF => config.asf.delta.is_some(),
    };
    let (asf, max_form) = if fixed {
        let asf = derive_asf(&cert, timing, config.eta, config.free_parameters())?;
        let mut best = None;
        for psi in psi_lattice(config.psi_choice()) {
            let m = to_max_form(&asf, psi, r)?;
            if best.as_ref().is_none_or(|b: &crate::certificates::MaxFormParameters| m.eps_hat < b.eps_hat) {
                best = Some(m);
            }
        }
        (asf, best.expect("psi lattice is nonempty"))
    } else {
        optimize_precision(&cert, timing, config.eta, r, config.psi_choice())?
    };
    Ok(Guarantee { cert, asf, max_form })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractSummary {
    pub grid_points: usize,
    pub states: usize,
    pub inputs: usize,
    pub transitions: usize,
    pub nonblocking: NonblockingReport,
}

impl AbstractSummary {
    pub fn to_text(&self) -> String {
        format!(
            "grid_points = {}\nstates = {}\ninputs = {}\ntransitions = {}\nblocking_states = {}\nblocked_pairs = {}\nnonblocking = {}\n",
            self.grid_points,
            self.states,
            self.inputs,
            self.transitions,
            self.nonblocking.blocking_states.len(),
            self.nonblocking.blocked_pairs,
            self.nonblocking.is_nonblocking()
        )
    }
}

pub fn cmd_abstract(config: &RunConfig) -> Result<(AbstractSummary, SymbolicModel), PipelineError> {
    let system = config.system()?;
    let model = build_symbolic(&system, &config.grid_domain()?)?;
    let summary = AbstractSummary {
        grid_points: model.points().len(),
        states: model.num_states(),
        inputs: model.inputs().len(),
        transitions: model.transition_count(),
        nonblocking: check_nonblocking(&model),
    };
    Ok((summary, model))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub label: String,
    pub case: CaseTag,
    pub sigma_tilde: f64,
    pub eps_tilde: f64,
    pub lambda_f: f64,
    pub eps_hat: f64,
    pub eps_hat_reference: Option<f64>,
    pub domain_states: usize,
    pub domain_points: usize,
    pub runtime: Duration,
}

impl CaseResult {
    /// `key = value` summary without the runtime, so it is reproducible.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "label = {}", self.label);
        let _ = writeln!(s, "case = {}", self.case);
        let _ = writeln!(s, "sigma_tilde = {}", self.sigma_tilde);
        let _ = writeln!(s, "eps_tilde = {}", self.eps_tilde);
        let _ = writeln!(s, "lambda_f = {}", self.lambda_f);
        let _ = writeln!(s, "eps_hat = {}", self.eps_hat);
        if let Some(r) = self.eps_hat_reference {
            let _ = writeln!(s, "eps_hat_reference = {r}");
        }
        let _ = writeln!(s, "domain_states = {}", self.domain_states);
        let _ = writeln!(s, "domain_points = {}", self.domain_points);
        s
    }
}

pub struct SynthesisOutcome {
    pub controller: SafetyController,
    pub guarantee: Guarantee,
    pub result: CaseResult,
}

/// Certificate, precision, abstraction and safety synthesis on the (deflated) safe set.
pub fn cmd_synthesize(config: &RunConfig) -> Result<SynthesisOutcome, PipelineError> {
    let start = Instant::now();
    let guarantee = derive_guarantee(config)?;
    let (_, model) = cmd_abstract(config)?;
    let spec = SafetySpec::new(config.safe_box()?, guarantee.eps_hat(), config.deflate);
    let controller = synthesize_safety(&model, &spec)?;
    let result = CaseResult {
        label: config.name.clone().unwrap_or_else(|| config.model.clone()),
        case: guarantee.asf.case,
        sigma_tilde: guarantee.asf.sigma_tilde,
        eps_tilde: guarantee.asf.eps_tilde,
        lambda_f: guarantee.asf.lambda_f,
        eps_hat: guarantee.eps_hat(),
        eps_hat_reference: config.reference_eps_hat,
        domain_states: controller.len(),
        domain_points: controller.point_count(),
        runtime: start.elapsed(),
    };
    Ok(SynthesisOutcome { controller, guarantee, result })
}

fn check_header(config: &RunConfig, controller: &SafetyController) -> Result<(), PipelineError> {
    let h = controller.header();
    let mismatch = |what: &str| Err(PipelineError::ControllerMismatch(what.to_string()));
    if h.dim != config.psi_l.len() {
        return mismatch("dimension");
    }
    if h.eta != config.eta || h.tau != config.tau {
        return mismatch("eta or tau");
    }
    if h.p1 != config.p1 || h.p2 != config.p2 {
        return mismatch("dwell window");
    }
    if h.inputs != config.inputs.values() {
        return mismatch("input set");
    }
    Ok(())
}

pub const CSV_HEADER: &str = "trial,k,t,x_before,x_after,u,jumped";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Closed-loop runs from `run.x0`, one per trial with schedule seed `run.seed + trial`.
///
/// CSV columns: `trial`, period `k`, time `t = k tau`, state before and after
/// the (possible) jump at `t` (coordinates joined by `;`), input `u` applied
/// over the following period, and whether a jump occurred at `t`. Rows are
/// sorted by `(trial, k)`.
pub fn cmd_simulate(config: &RunConfig, controller: &SafetyController) -> Result<String, PipelineError> {
    check_header(config, controller)?;
    let system = config.system()?;
    let guarantee = derive_guarantee(config)?;
    let x0 = config.initial_state()?;
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for trial in 0..config.run.trials {
        let seed = config.run.seed.wrapping_add(trial as u64);
        let (traj, _) = closed_loop(&system, controller, &guarantee, &x0, config.run.horizon, seed)?;
        for s in &traj.samples {
            let _ = writeln!(
                csv,
                "{trial},{},{},{},{},{},{}",
                s.k,
                s.time,
                join(&s.before),
                join(&s.after),
                s.input,
                u8::from(s.jumped)
            );
        }
    }
    Ok(csv)
}

/// Comparison table of computed and reference precisions.
pub fn casestudy_table(results: &[CaseResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:<4} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10}",
        "label", "case", "sigma_tilde", "eps_tilde", "lambda_f", "eps_hat", "reference", "states"
    );
    for r in results {
        let reference = r.eps_hat_reference.map_or("-".to_string(), |v| format!("{v}"));
        let _ = writeln!(
            s,
            "{:<6} {:<4} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>10} {:>10}",
            r.label, r.case.to_string(), r.sigma_tilde, r.eps_tilde, r.lambda_f, r.eps_hat, reference, r.domain_states
        );
    }
    let _ = writeln!(s, "{DEFLATION_NOTE}");
    let _ = writeln!(s, "{SAMPLING_NOTE}");
    s
}

/// Runs the three built-in cases and writes, per case, the controller, a
/// summary and closed-loop trajectories, plus the comparison table.
pub fn cmd_casestudy(out: &Path, seed: u64, low_gain: bool) -> Result<Vec<CaseResult>, PipelineError> {
    fs::create_dir_all(out)?;
    let mut results = Vec::new();
    for case in 1..=3 {
        let mut config = builtin_case(case, low_gain).expect("built-in case");
        config.run.seed = seed;
        config.run.trials = 10;
        let outcome = cmd_synthesize(&config)?;
        let name = format!("case{case}");
        fs::write(out.join(format!("{name}.controller")), outcome.controller.to_text())?;
        fs::write(out.join(format!("{name}.summary")), outcome.result.to_text())?;
        fs::write(out.join(format!("{name}.csv")), cmd_simulate(&config, &outcome.controller)?)?;
        results.push(outcome.result);
    }
    fs::write(out.join("casestudy.txt"), casestudy_table(&results))?;
    Ok(results)
}
