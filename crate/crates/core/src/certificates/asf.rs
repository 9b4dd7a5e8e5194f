//! Alternating-simulation parameters derived from a stability certificate.
//!
//! The simulation function is `W((x, l), (x_hat, l)) = V(x, x_hat) * w(l)` with a
//! mode weight `w` that depends on which of the flow/jump dynamics contract.
//! One abstract step then satisfies `W+ <= sigma_tilde * W + eps_tilde`, which is
//! converted into the max form `W+ <= max{sigma W, rho(|u|), eps}` and finally
//! into the output precision `eps_hat`.

use std::fmt;

use thiserror::Error;

use super::certificate::{check_dwell, inter_impulse_gain, StabilityCertificate};
use super::comparison::ComparisonFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsfError {
    #[error("kappa_d = {kappa_d} >= 1 with kappa_c = {kappa_c} <= 0: neither dynamics contracts")]
    CaseExcluded { kappa_c: f64, kappa_d: f64 },
    #[error("dwell condition ln(kappa_d) - kappa_c*tau*l < 0 fails for l in {{{p1}, {p2}}}")]
    DwellViolated { p1: usize, p2: usize },
    #[error("free parameter infeasible: {0}")]
    FreeParamInfeasible(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Which of the continuous (`kappa_c`) and discrete (`kappa_d`) parts contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseTag {
    /// `kappa_d < 1`, `kappa_c > 0`: both contract.
    DD,
    /// `kappa_d >= 1`, `kappa_c > 0`: flows pay for expanding jumps.
    FD,
    /// `kappa_d < 1`, `kappa_c <= 0`: jumps pay for expanding flows.
    DF,
}

impl CaseTag {
    pub fn classify(kappa_c: f64, kappa_d: f64) -> Result<Self, AsfError> {
        match (kappa_d < 1.0, kappa_c > 0.0) {
            (true, true) => Ok(Self::DD),
            (false, true) => Ok(Self::FD),
            (true, false) => Ok(Self::DF),
            (false, false) => Err(AsfError::CaseExcluded { kappa_c, kappa_d }),
        }
    }

    /// Conventional case number (1, 2, 3).
    pub fn number(self) -> u8 {
        match self {
            Self::DD => 1,
            Self::FD => 2,
            Self::DF => 3,
        }
    }
}

impl fmt::Display for CaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::DD => "DD",
            Self::FD => "FD",
            Self::DF => "DF",
        };
        f.write_str(s)
    }
}

/// Sampling period and dwell window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub tau: f64,
    pub p1: usize,
    pub p2: usize,
}

/// The free constants of the weighted simulation function: `epsilon` in
/// `(0, 1)` for case FD and `delta > p2` for case DF. Unused ones are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FreeParameters {
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsfParameters {
    pub case: CaseTag,
    pub timing: Timing,
    pub eta: f64,
    pub kappa_c: f64,
    pub kappa_d: f64,
    pub epsilon_free: Option<f64>,
    pub delta_free: Option<f64>,
    pub lambda_f: f64,
    pub gamma_f: ComparisonFunction,
    pub alpha_tilde: ComparisonFunction,
    pub sigma_tilde: f64,
    pub rho_u_tilde: ComparisonFunction,
    pub eps_tilde: f64,
}

impl AsfParameters {
    /// Mode weight `w(l)` multiplying `V`.
    pub fn mode_weight(&self, l: usize) -> f64 {
        let l = l as f64;
        match self.case {
            CaseTag::DD => 1.0,
            CaseTag::FD => (self.kappa_c * self.timing.tau * self.epsilon_free.unwrap() * l).exp(),
            CaseTag::DF => self.kappa_d.powf(l / self.delta_free.unwrap()),
        }
    }

    /// Simulation-function value for a pair with certificate value `v` in mode `l`.
    pub fn weighted(&self, v: f64, l: usize) -> f64 {
        v * self.mode_weight(l)
    }
}

/// Builds the simulation-function parameters for the abstraction with grid
/// spacing `eta`, where the concrete input copies the abstract one.
pub fn derive_asf(
    cert: &StabilityCertificate,
    timing: Timing,
    eta: f64,
    free: FreeParameters,
) -> Result<AsfParameters, AsfError> {
    let Timing { tau, p1, p2 } = timing;
    let (kc, kd) = (cert.kappa_c, cert.kappa_d);
    if !(kd > 0.0) {
        return Err(AsfError::InvalidArgument(format!("kappa_d = {kd} must be positive")));
    }
    if !(eta > 0.0) {
        return Err(AsfError::InvalidArgument(format!("eta = {eta} must be positive")));
    }
    let case = CaseTag::classify(kc, kd)?;
    if !check_dwell(kc, kd, tau, p1, p2) {
        return Err(AsfError::DwellViolated { p1, p2 });
    }
    let alpha_lo = cert.alpha_lo;
    let (lambda_f, gamma_f, alpha_tilde, epsilon_free, delta_free) = match case {
        CaseTag::DD => {
            let lambda = (-kc * tau).exp().max(kd);
            (lambda, cert.gamma_hat, alpha_lo, None, None)
        }
        CaseTag::FD => {
            let eps = free
                .epsilon
                .ok_or_else(|| AsfError::FreeParamInfeasible("case FD needs epsilon".into()))?;
            if !(eps > 0.0 && eps < 1.0) {
                return Err(AsfError::FreeParamInfeasible(format!("epsilon = {eps} not in (0, 1)")));
            }
            if !(kd.ln() - kc * tau * eps * (p1 as f64) < 0.0) {
                return Err(AsfError::FreeParamInfeasible(format!(
                    "ln(kappa_d) - kappa_c*tau*epsilon*p1 >= 0 at epsilon = {eps}"
                )));
            }
            let lambda = (-kc * tau * (1.0 - eps)).exp().max((-kc * tau * eps * p1 as f64).exp() * kd);
            let gamma = cert.gamma_hat.scaled((kc * tau * eps * (p2 + 1) as f64).exp());
            // output bound |x - x_hat| <= alpha_lo^{-1}(e^{-kc tau eps p1} W)
            let alpha = alpha_lo.scaled((kc * tau * eps * p1 as f64).exp());
            (lambda, gamma, alpha, Some(eps), None)
        }
        CaseTag::DF => {
            let delta = free
                .delta
                .ok_or_else(|| AsfError::FreeParamInfeasible("case DF needs delta".into()))?;
            if !(delta > p2 as f64) || !delta.is_finite() {
                return Err(AsfError::FreeParamInfeasible(format!("delta = {delta} must exceed p2 = {p2}")));
            }
            if !(kd.ln() - kc * tau * delta < 0.0) {
                return Err(AsfError::FreeParamInfeasible(format!(
                    "ln(kappa_d) - kappa_c*tau*delta >= 0 at delta = {delta}"
                )));
            }
            let lambda = ((-kc * tau).exp() * kd.powf(1.0 / delta)).max(kd.powf((delta - p2 as f64) / delta));
            // output bound |x - x_hat| <= alpha_lo^{-1}(kd^{-p2/delta} W)
            let alpha = alpha_lo.scaled(kd.powf(p2 as f64 / delta));
            (lambda, cert.gamma_hat, alpha, None, Some(delta))
        }
    };
    debug_assert!(lambda_f < 1.0);
    Ok(AsfParameters {
        case,
        timing,
        eta,
        kappa_c: kc,
        kappa_d: kd,
        epsilon_free,
        delta_free,
        lambda_f,
        gamma_f,
        alpha_tilde,
        sigma_tilde: lambda_f,
        rho_u_tilde: ComparisonFunction::Zero,
        eps_tilde: gamma_f.eval(eta),
    })
}

/// Parameters for the opposite direction (concrete to abstract), where the
/// abstract input approximates the concrete one within `mu`.
pub fn derive_reverse_asf(asf: &AsfParameters, cert: &StabilityCertificate, mu: f64) -> Result<AsfParameters, AsfError> {
    if !(mu >= 0.0) {
        return Err(AsfError::InvalidArgument(format!("mu = {mu} must be nonnegative")));
    }
    let tau = asf.timing.tau;
    let mut flow_gain = inter_impulse_gain(cert.kappa_c, tau);
    if asf.case == CaseTag::FD {
        let eps = asf.epsilon_free.expect("FD parameters carry epsilon");
        flow_gain *= (cert.kappa_c * tau * eps * (asf.timing.p2 + 1) as f64).exp();
    }
    let extra = (flow_gain * cert.rho_uc.eval(mu)).max(cert.rho_ud.eval(mu));
    Ok(AsfParameters { eps_tilde: asf.eps_tilde + extra, ..asf.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxFormParameters {
    pub psi: f64,
    pub sigma: f64,
    pub rho: ComparisonFunction,
    pub eps: f64,
    pub input_bound: f64,
    pub eps_hat: f64,
}

impl MaxFormParameters {
    /// Level set `max{rho(r), eps}` that defines the simulation relation.
    pub fn relation_level(&self) -> f64 {
        self.rho.eval(self.input_bound).max(self.eps)
    }
}

/// Max-form restatement for a chosen `psi` in `(0, 1)`, and the resulting
/// precision `eps_hat = alpha_tilde^{-1}(max{rho(r), eps})`.
pub fn to_max_form(asf: &AsfParameters, psi: f64, input_bound: f64) -> Result<MaxFormParameters, AsfError> {
    if !(psi > 0.0 && psi < 1.0) {
        return Err(AsfError::InvalidArgument(format!("psi = {psi} not in (0, 1)")));
    }
    let slack = (1.0 - asf.sigma_tilde) * psi;
    let sigma = 1.0 - (1.0 - psi) * (1.0 - asf.sigma_tilde);
    let rho = asf.rho_u_tilde.scaled(1.0 / slack);
    let eps = asf.eps_tilde / slack;
    let level = rho.eval(input_bound).max(eps);
    let eps_hat = asf
        .alpha_tilde
        .inverse()
        .ok_or_else(|| AsfError::InvalidArgument("alpha_tilde must be invertible".into()))?
        .eval(level);
    Ok(MaxFormParameters { psi, sigma, rho, eps, input_bound, eps_hat })
}

/// How `psi` is chosen during the precision search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsiChoice {
    Fixed(f64),
    /// Search the lattice `0.01, 0.02, ..., 0.99, 0.999`.
    Search,
}

pub const PSI_LATTICE_MAX: f64 = 0.999;
pub const DELTA_SEARCH_SPAN: f64 = 10.0;

/// Candidate `psi` values for a choice.
pub fn psi_lattice(choice: PsiChoice) -> Vec<f64> {
    match choice {
        PsiChoice::Fixed(psi) => vec![psi],
        PsiChoice::Search => (1..=99).map(|k| k as f64 / 100.0).chain([PSI_LATTICE_MAX]).collect(),
    }
}

/// Minimizes `eps_hat` over the free constants with a deterministic lattice
/// search followed by two rounds of local lattice refinement.
///
/// `epsilon` ranges over `(0, 1)` (case FD) and `delta` over `(p2, p2 + 10]`
/// (case DF). Ties keep the earlier lattice point.
pub fn optimize_precision(
    cert: &StabilityCertificate,
    timing: Timing,
    eta: f64,
    input_bound: f64,
    psi: PsiChoice,
) -> Result<(AsfParameters, MaxFormParameters), AsfError> {
    let case = CaseTag::classify(cert.kappa_c, cert.kappa_d)?;
    if !check_dwell(cert.kappa_c, cert.kappa_d, timing.tau, timing.p1, timing.p2) {
        return Err(AsfError::DwellViolated { p1: timing.p1, p2: timing.p2 });
    }
    let evaluate = |free: FreeParameters, psi: f64| -> Option<(AsfParameters, MaxFormParameters)> {
        let asf = derive_asf(cert, timing, eta, free).ok()?;
        let max = to_max_form(&asf, psi, input_bound).ok()?;
        max.eps_hat.is_finite().then_some((asf, max))
    };
    // one-dimensional free parameter: (lower, upper, open upper end)
    let range = match case {
        CaseTag::DD => None,
        CaseTag::FD => Some((0.0, 1.0, true)),
        CaseTag::DF => Some((timing.p2 as f64, timing.p2 as f64 + DELTA_SEARCH_SPAN, false)),
    };
    let make = |v: f64| match case {
        CaseTag::DD => FreeParameters::default(),
        CaseTag::FD => FreeParameters { epsilon: Some(v), delta: None },
        CaseTag::DF => FreeParameters { epsilon: None, delta: Some(v) },
    };

    let mut best: Option<(AsfParameters, MaxFormParameters)> = None;
    let mut consider = |cand: Option<(AsfParameters, MaxFormParameters)>| {
        if let Some(c) = cand {
            if best.as_ref().is_none_or(|b| c.1.eps_hat < b.1.eps_hat) {
                best = Some(c);
            }
        }
    };
    for psi in psi_lattice(psi) {
        match range {
            None => consider(evaluate(make(0.0), psi)),
            Some((lo, hi, open_hi)) => {
                const COARSE: usize = 200;
                const FINE: usize = 100;
                let mut step = (hi - lo) / COARSE as f64;
                let upper = if open_hi { COARSE - 1 } else { COARSE };
                let mut local: Option<(f64, f64)> = None;
                let scan = |points: &mut dyn Iterator<Item = f64>, local: &mut Option<(f64, f64)>| {
                    for v in points {
                        if let Some(c) = evaluate(make(v), psi) {
                            if local.is_none_or(|(_, e)| c.1.eps_hat < e) {
                                *local = Some((v, c.1.eps_hat));
                            }
                        }
                    }
                };
                scan(&mut (1..=upper).map(|k| lo + k as f64 * step), &mut local);
                for _ in 0..2 {
                    let Some((center, _)) = local else { break };
                    let fine = 2.0 * step / FINE as f64;
                    scan(
                        &mut (0..=FINE)
                            .map(|k| center - step + k as f64 * fine)
                            .filter(|&v| v > lo && (v < hi || (!open_hi && v <= hi))),
                        &mut local,
                    );
                    step = fine;
                }
                if let Some((v, _)) = local {
                    consider(evaluate(make(v), psi));
                }
            }
        }
    }
    best.ok_or_else(|| AsfError::FreeParamInfeasible("no feasible point on the search lattice".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CASE1: Timing = Timing { tau: 0.2, p1: 1, p2: 5 };
    const CASE2: Timing = Timing { tau: 0.2, p1: 5, p2: 7 };
    const CASE3: Timing = Timing { tau: 0.2, p1: 1, p2: 2 };

    fn cert(kappa_c: f64, kappa_d: f64) -> StabilityCertificate {
        StabilityCertificate::storage(-kappa_c, kappa_d, 10.0, 10.0)
    }

    #[test]
    fn case1_parameters() {
        let asf = derive_asf(&cert(0.2, 0.9), CASE1, 0.01, FreeParameters::default()).unwrap();
        assert_eq!(asf.case, CaseTag::DD);
        assert!((asf.sigma_tilde - 0.9607894391523232).abs() < 1e-15);
        assert!((asf.eps_tilde - 0.01).abs() < 1e-15);
        assert!(asf.rho_u_tilde.is_zero());
        assert_eq!(asf.alpha_tilde, ComparisonFunction::IDENTITY);
    }

    #[test]
    fn excluded_case() {
        let r = derive_asf(&cert(-0.1, 1.0), CASE1, 0.01, FreeParameters::default());
        assert!(matches!(r, Err(AsfError::CaseExcluded { .. })));
        let r = derive_asf(&cert(0.0, 1.5), CASE1, 0.01, FreeParameters::default());
        assert!(matches!(r, Err(AsfError::CaseExcluded { .. })));
    }

    #[test]
    fn case3_parameters() {
        let free = FreeParameters { epsilon: None, delta: Some(2.5) };
        let asf = derive_asf(&cert(-0.2, 0.85), CASE3, 0.01, free).unwrap();
        assert_eq!(asf.case, CaseTag::DF);
        // max{e^{0.04} 0.85^{0.4}, 0.85^{0.2}}
        assert!((asf.sigma_tilde - 0.9753025272055671).abs() < 1e-12);
        assert!((asf.eps_tilde - 0.01).abs() < 1e-15);
        let r = derive_asf(&cert(-0.2, 0.85), CASE3, 0.01, FreeParameters { epsilon: None, delta: Some(2.0) });
        assert!(matches!(r, Err(AsfError::FreeParamInfeasible(_))));
        // ln(0.85) + 0.04 delta >= 0 for delta >= 4.0630
        let r = derive_asf(&cert(-0.2, 0.85), CASE3, 0.01, FreeParameters { epsilon: None, delta: Some(4.1) });
        assert!(matches!(r, Err(AsfError::FreeParamInfeasible(_))));
    }

    #[test]
    fn case2_feasibility_window() {
        // ln(1.01) - 0.3 epsilon < 0 needs epsilon > 0.03317
        let r = derive_asf(&cert(0.3, 1.01), CASE2, 0.01, FreeParameters { epsilon: Some(0.03), delta: None });
        assert!(matches!(r, Err(AsfError::FreeParamInfeasible(_))));
        let asf = derive_asf(&cert(0.3, 1.01), CASE2, 0.01, FreeParameters { epsilon: Some(0.5), delta: None }).unwrap();
        assert_eq!(asf.case, CaseTag::FD);
        let expect = (-0.03f64).exp().max((-0.15f64).exp() * 1.01);
        assert!((asf.sigma_tilde - expect).abs() < 1e-15);
        assert!((asf.eps_tilde - (0.24f64).exp() * 0.01).abs() < 1e-15);
    }

    #[test]
    fn dwell_violation_reported() {
        let r = derive_asf(&cert(0.05, 1.2), CASE1, 0.01, FreeParameters { epsilon: Some(0.5), delta: None });
        assert!(matches!(r, Err(AsfError::DwellViolated { .. })));
    }

    #[test]
    fn reverse_direction() {
        let c = cert(0.2, 0.9);
        let fwd = derive_asf(&c, CASE1, 0.01, FreeParameters::default()).unwrap();
        assert_eq!(derive_reverse_asf(&fwd, &c, 0.0).unwrap(), fwd);
        let rev = derive_reverse_asf(&fwd, &c, 1.0).unwrap();
        assert!((rev.eps_tilde - 10.01).abs() < 1e-12);
        assert_eq!(rev.sigma_tilde, fwd.sigma_tilde);
        let mut wide = c.clone();
        wide.rho_ud = ComparisonFunction::linear(0.5);
        let rev = derive_reverse_asf(&fwd, &wide, 1.0).unwrap();
        assert!((rev.eps_tilde - (0.01 + 1.9605280423838412)).abs() < 1e-12);
    }

    #[test]
    fn max_form_examples() {
        let mut asf = derive_asf(&cert(0.2, 0.9), CASE1, 0.01, FreeParameters::default()).unwrap();
        let m = to_max_form(&asf, 0.99, 1.0).unwrap();
        assert!((m.eps_hat - 0.25760942671159404).abs() < 1e-12);
        assert_eq!(to_max_form(&asf, 0.99, 100.0).unwrap().eps_hat, m.eps_hat);
        asf.sigma_tilde = 0.5;
        asf.eps_tilde = 1.0;
        let m = to_max_form(&asf, 0.5, 1.0).unwrap();
        assert_eq!(m.sigma, 0.75);
        assert_eq!(m.eps, 4.0);
        assert!(to_max_form(&asf, 1.0, 1.0).is_err());
    }

    #[test]
    fn max_form_dominates_additive_form() {
        let asf = derive_asf(&cert(0.2, 0.9), CASE1, 0.01, FreeParameters::default()).unwrap();
        for k in 1..1000 {
            let m = to_max_form(&asf, k as f64 / 1000.0, 1.0).unwrap();
            assert!(m.sigma >= asf.sigma_tilde && m.sigma < 1.0);
            assert!(m.eps >= asf.eps_tilde);
        }
    }

    #[test]
    fn precision_grows_with_eta() {
        let c = cert(0.2, 0.9);
        let mut last = 0.0;
        for eta in [0.001, 0.005, 0.01, 0.02, 0.1] {
            let asf = derive_asf(&c, CASE1, eta, FreeParameters::default()).unwrap();
            let e = to_max_form(&asf, 0.99, 1.0).unwrap().eps_hat;
            assert!(e > last);
            last = e;
        }
    }

    #[test]
    fn optimizer_case1() {
        let (_, m) = optimize_precision(&cert(0.2, 0.9), CASE1, 0.01, 1.0, PsiChoice::Search).unwrap();
        assert!(m.eps_hat <= 0.25760942671159404);
        assert_eq!(m.psi, PSI_LATTICE_MAX);
        let (_, m) = optimize_precision(&cert(0.2, 0.9), CASE1, 0.01, 1.0, PsiChoice::Fixed(0.99)).unwrap();
        assert!((m.eps_hat - 0.25760942671159404).abs() < 1e-12);
    }

    #[test]
    fn optimizer_cases_2_and_3() {
        let (asf, m) = optimize_precision(&cert(0.3, 1.01), CASE2, 0.01, 1.0, PsiChoice::Fixed(0.99)).unwrap();
        assert_eq!(asf.case, CaseTag::FD);
        // dense brute-force minimum over epsilon is 0.2216615 near epsilon = 0.1943
        assert!(m.eps_hat <= 0.75);
        assert!(m.eps_hat <= 0.22166151317677152 + 1e-9 && m.eps_hat > 0.2215, "{}", m.eps_hat);
        let (asf, m) = optimize_precision(&cert(-0.2, 0.85), CASE3, 0.01, 1.0, PsiChoice::Fixed(0.99)).unwrap();
        assert_eq!(asf.case, CaseTag::DF);
        // dense brute-force minimum over delta is 0.4261176 near delta = 2.4075
        assert!(m.eps_hat <= 0.65);
        assert!(m.eps_hat <= 0.4261175779472554 + 1e-9 && m.eps_hat > 0.4260, "{}", m.eps_hat);
    }

    #[test]
    fn optimizer_reports_dwell_failure() {
        let r = optimize_precision(&cert(0.05, 1.2), CASE1, 0.01, 1.0, PsiChoice::Search);
        assert!(matches!(r, Err(AsfError::DwellViolated { .. })));
    }

    #[test]
    fn contraction_on_random_feasible_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 3000 {
            let kc = rng.gen_range(-1.0..1.0);
            let kd = rng.gen_range(0.05..1.5);
            let p1 = rng.gen_range(1..6);
            let timing = Timing { tau: rng.gen_range(0.05..0.5), p1, p2: p1 + rng.gen_range(0..4) };
            let free = FreeParameters { epsilon: Some(rng.gen_range(0.01..0.99)), delta: Some(timing.p2 as f64 + rng.gen_range(0.01..10.0)) };
            if let Ok(asf) = derive_asf(&cert(kc, kd), timing, 0.01, free) {
                assert!(asf.lambda_f < 1.0, "{asf:?}");
                checked += 1;
            }
        }
    }
}
