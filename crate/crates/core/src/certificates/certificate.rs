use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::comparison::ComparisonFunction;
use crate::dynamics::ImpulsiveSystem;
use crate::geometry::AxisBox;

/// Incremental Lyapunov-like function `V(x, x_hat)`.
pub trait IncrementalLyapunov: Send + Sync + fmt::Debug {
    fn value(&self, x: &[f64], x_hat: &[f64]) -> f64;

    /// Writes the partial gradients into `dx` and `dx_hat` and returns `true`,
    /// or returns `false` when no analytic gradient is available.
    fn gradient(&self, _x: &[f64], _x_hat: &[f64], _dx: &mut [f64], _dx_hat: &mut [f64]) -> bool {
        false
    }
}

/// `V(x, x_hat) = |x - x_hat|_inf`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxNormDistance {
    /// Use central finite differences instead of the analytic gradient.
    pub numeric_gradient: bool,
}

impl IncrementalLyapunov for MaxNormDistance {
    fn value(&self, x: &[f64], x_hat: &[f64]) -> f64 {
        x.iter().zip(x_hat).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn gradient(&self, x: &[f64], x_hat: &[f64], dx: &mut [f64], dx_hat: &mut [f64]) -> bool {
        if self.numeric_gradient {
            return false;
        }
        dx.fill(0.0);
        dx_hat.fill(0.0);
        let (mut arg, mut best) = (0, -1.0);
        for (i, (a, b)) in x.iter().zip(x_hat).enumerate() {
            if (a - b).abs() > best {
                best = (a - b).abs();
                arg = i;
            }
        }
        let s = (x[arg] - x_hat[arg]).signum();
        dx[arg] = s;
        dx_hat[arg] = -s;
        true
    }
}

/// Incremental stability certificate for an impulsive system: bounds `V` by
/// `alpha_lo`/`alpha_hi`, decays at rate `kappa_c` along flows, grows by at
/// most `kappa_d` across jumps, and satisfies a weak triangle inequality with
/// gain `gamma_hat`.
#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    pub lyapunov: Arc<dyn IncrementalLyapunov>,
    pub alpha_lo: ComparisonFunction,
    pub alpha_hi: ComparisonFunction,
    pub rho_uc: ComparisonFunction,
    pub rho_ud: ComparisonFunction,
    pub kappa_c: f64,
    pub kappa_d: f64,
    pub gamma_hat: ComparisonFunction,
}

impl StabilityCertificate {
    /// Certificate of the storage-delivery model with `V = |x - x_hat|`.
    pub fn storage(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self {
            lyapunov: Arc::new(MaxNormDistance::default()),
            alpha_lo: ComparisonFunction::IDENTITY,
            alpha_hi: ComparisonFunction::IDENTITY,
            rho_uc: ComparisonFunction::linear(c.abs()),
            rho_ud: ComparisonFunction::linear(d.abs()),
            kappa_c: -a,
            kappa_d: b.abs(),
            gamma_hat: ComparisonFunction::IDENTITY,
        }
    }

    /// Max-norm certificate of decoupled linear dynamics (worst coordinate).
    pub fn diagonal_linear(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Self {
        let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let max_rate = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            kappa_c: -max_rate,
            kappa_d: max_abs(b),
            rho_uc: ComparisonFunction::linear(max_abs(c)),
            rho_ud: ComparisonFunction::linear(max_abs(d)),
            ..Self::storage(0.0, 1.0, 0.0, 0.0)
        }
    }

    pub fn value(&self, x: &[f64], x_hat: &[f64]) -> f64 {
        self.lyapunov.value(x, x_hat)
    }
}

/// Dwell condition `ln(kappa_d) - kappa_c * tau * l < 0` at `l = p1` and `l = p2`.
pub fn check_dwell(kappa_c: f64, kappa_d: f64, tau: f64, p1: usize, p2: usize) -> bool {
    [p1, p2].iter().all(|&l| kappa_d.ln() - kappa_c * tau * (l as f64) < 0.0)
}

/// `(1 - e^{-kappa_c gap}) / kappa_c`, equal to `gap` when `kappa_c = 0`.
pub fn inter_impulse_gain(kappa_c: f64, gap: f64) -> f64 {
    if kappa_c == 0.0 {
        gap
    } else {
        -(-kappa_c * gap).exp_m1() / kappa_c
    }
}

/// Bound on `V` after flowing for `gap` from a pair with value `v0`, when the
/// inputs differ by at most `input_mismatch`.
pub fn flow_mismatch_bound(cert: &StabilityCertificate, v0: f64, gap: f64, input_mismatch: f64) -> f64 {
    (-cert.kappa_c * gap).exp() * v0
        + inter_impulse_gain(cert.kappa_c, gap) * cert.rho_uc.eval(input_mismatch)
}

/// Largest observed violation of each certificate condition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CertificateReport {
    pub samples: usize,
    pub tolerance: f64,
    /// `alpha_lo(|x - x_hat|) - V`.
    pub sandwich_lower: f64,
    /// `V - alpha_hi(|x - x_hat|)`.
    pub sandwich_upper: f64,
    /// Directional derivative of `V` minus `-kappa_c V + rho_uc(|u - u_hat|)`.
    pub dissipation: f64,
    /// `V(g, g_hat) - kappa_d V - rho_ud(|u - u_hat|)`.
    pub jump: f64,
    /// `V(x, y) - V(x, z) - gamma_hat(|y - z|)`.
    pub triangle: f64,
    pub used_numeric_gradient: bool,
}

impl CertificateReport {
    pub fn max_violation(&self) -> f64 {
        [self.sandwich_lower, self.sandwich_upper, self.dissipation, self.jump, self.triangle]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_violation() <= self.tolerance
    }
}

pub const CERTIFICATE_TOLERANCE: f64 = 1e-6;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Falsification check of the certificate on random samples drawn from `region`
/// and the system's input set. Violations are relative to `max(1, |rhs|)`.
pub fn verify_certificate(
    system: &ImpulsiveSystem,
    cert: &StabilityCertificate,
    region: &AxisBox,
    samples: usize,
    seed: u64,
) -> CertificateReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = system.dim();
    let inputs = system.inputs();
    let dynamics = system.dynamics();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        region
            .lower()
            .iter()
            .zip(region.upper())
            .map(|(&lo, &hi)| rng.gen_range(lo..=hi))
            .collect()
    };
    let mut report = CertificateReport {
        samples,
        tolerance: CERTIFICATE_TOLERANCE,
        sandwich_lower: f64::NEG_INFINITY,
        sandwich_upper: f64::NEG_INFINITY,
        dissipation: f64::NEG_INFINITY,
        jump: f64::NEG_INFINITY,
        triangle: f64::NEG_INFINITY,
        used_numeric_gradient: false,
    };
    let rel = |excess: f64, rhs: f64| excess / rhs.abs().max(1.0);
    let (mut f, mut f_hat) = (vec![0.0; n], vec![0.0; n]);
    let (mut gx, mut gx_hat) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..samples {
        let x = draw(&mut rng);
        // every fourth sample uses the diagonal pair x = x_hat, u = u_hat
        let diagonal = i % 4 == 3;
        let x_hat = if diagonal { x.clone() } else { draw(&mut rng) };
        let z = draw(&mut rng);
        let u = inputs[rng.gen_range(0..inputs.len())];
        let u_hat = if diagonal { u } else { inputs[rng.gen_range(0..inputs.len())] };
        let du = (u - u_hat).abs();

        let v = cert.value(&x, &x_hat);
        let d = dist(&x, &x_hat);
        let lo = cert.alpha_lo.eval(d);
        let hi = cert.alpha_hi.eval(d);
        report.sandwich_lower = report.sandwich_lower.max(rel(lo - v, v));
        report.sandwich_upper = report.sandwich_upper.max(rel(v - hi, hi));

        dynamics.flow(&x, u, &mut f);
        dynamics.flow(&x_hat, u_hat, &mut f_hat);
        let dv = if cert.lyapunov.gradient(&x, &x_hat, &mut gx, &mut gx_hat) {
            gx.iter().zip(&f).map(|(g, v)| g * v).sum::<f64>()
                + gx_hat.iter().zip(&f_hat).map(|(g, v)| g * v).sum::<f64>()
        } else {
            report.used_numeric_gradient = true;
            let scale = inf_norm(&x).max(inf_norm(&x_hat)).max(1.0)
                / inf_norm(&f).max(inf_norm(&f_hat)).max(1.0);
            let h = 1e-6 * scale;
            let shift = |p: &[f64], dir: &[f64], s: f64| -> Vec<f64> {
                p.iter().zip(dir).map(|(a, b)| a + s * b).collect()
            };
            let plus = cert.value(&shift(&x, &f, h), &shift(&x_hat, &f_hat, h));
            let minus = cert.value(&shift(&x, &f, -h), &shift(&x_hat, &f_hat, -h));
            (plus - minus) / (2.0 * h)
        };
        let rhs = -cert.kappa_c * v + cert.rho_uc.eval(du);
        report.dissipation = report.dissipation.max(rel(dv - rhs, rhs));

        let g = system.jump_map(&x, u);
        let g_hat = system.jump_map(&x_hat, u_hat);
        let rhs = cert.kappa_d * v + cert.rho_ud.eval(du);
        report.jump = report.jump.max(rel(cert.value(&g, &g_hat) - rhs, rhs));

        let rhs = cert.value(&x, &z) + cert.gamma_hat.eval(dist(&x_hat, &z));
        report.triangle = report.triangle.max(rel(v - rhs, rhs));
    }
    report
}
