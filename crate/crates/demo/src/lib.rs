//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a flat `Float64Array`; layouts are given per function.

use impsym::certificates::{derive_asf, optimize_precision, to_max_form, FreeParameters, PsiChoice};
use impsym::config::{builtin_case, RunConfig};
use impsym::pipeline::derive_guarantee;
use impsym::synthesis::{closed_loop, synthesize_safety, Guarantee, SafetyController, SafetySpec};
use impsym::{build_symbolic, ImpulsiveSystem};
use wasm_bindgen::prelude::*;

fn config(case: u8, eta: f64) -> Result<RunConfig, String> {
    let mut c = builtin_case(case, false).ok_or_else(|| format!("no built-in case {case}"))?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(format!("grid spacing {eta} must lie in (0, 1]"));
    }
    c.eta = eta;
    Ok(c)
}

/// `eps_hat` for `steps` grid spacings spread evenly over `[eta_min, eta_max]`,
/// with `psi` fixed (`psi` outside `(0, 1)` searches it).
/// Layout: `[eta_0, eps_0, eta_1, eps_1, ...]`.
pub fn precision_curve(case: u8, eta_min: f64, eta_max: f64, steps: usize, psi: f64) -> Result<Vec<f64>, String> {
    let c = config(case, eta_max)?;
    if !(eta_min > 0.0 && eta_min <= eta_max) || steps < 2 {
        return Err("need 0 < eta_min <= eta_max and at least two steps".into());
    }
    let cert = c.certificate().map_err(|e| e.to_string())?;
    let choice = if psi > 0.0 && psi < 1.0 { PsiChoice::Fixed(psi) } else { PsiChoice::Search };
    let mut out = Vec::with_capacity(2 * steps);
    for k in 0..steps {
        let eta = eta_min + (eta_max - eta_min) * k as f64 / (steps - 1) as f64;
        let (_, m) = optimize_precision(&cert, c.timing(), eta, c.input_bound(), choice).map_err(|e| e.to_string())?;
        out.extend([eta, m.eps_hat]);
    }
    Ok(out)
}

struct Synthesized {
    system: ImpulsiveSystem,
    guarantee: Guarantee,
    controller: SafetyController,
}

fn synthesize(case: u8, eta: f64) -> Result<Synthesized, String> {
    let c = config(case, eta)?;
    let system = c.system().map_err(|e| e.to_string())?;
    let guarantee = derive_guarantee(&c).map_err(|e| e.to_string())?;
    let model = build_symbolic(&system, &c.grid_domain().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let spec = SafetySpec::new(c.safe_box().map_err(|e| e.to_string())?, guarantee.eps_hat(), true);
    let controller = synthesize_safety(&model, &spec).map_err(|e| e.to_string())?;
    Ok(Synthesized { system, guarantee, controller })
}

/// Winning grid points per mode. Layout: `[x, mode, input_count, ...]`.
pub fn controller_domain(case: u8, eta: f64) -> Result<Vec<f64>, String> {
    let s = synthesize(case, eta)?;
    let h = s.controller.header().eta;
    Ok(s.controller
        .entries()
        .flat_map(|(q, mode, inputs)| [q.0[0] as f64 * h, mode as f64, inputs.len() as f64])
        .collect())
}

/// Closed-loop run from `x0`. Layout: `[eps_hat, then per period: t, x_before, x_after, u, jumped]`.
pub fn trajectory(case: u8, eta: f64, x0: f64, horizon: usize, seed: u64) -> Result<Vec<f64>, String> {
    let s = synthesize(case, eta)?;
    let (traj, _) = closed_loop(&s.system, &s.controller, &s.guarantee, &[x0], horizon, seed).map_err(|e| e.to_string())?;
    let mut out = vec![s.guarantee.eps_hat()];
    for p in &traj.samples {
        out.extend([p.time, p.before[0], p.after[0], p.input, f64::from(u8::from(p.jumped))]);
    }
    Ok(out)
}

/// `eps_hat` of case 1 at one grid spacing and `psi`, without any search.
pub fn precision_at(eta: f64, psi: f64) -> Result<f64, String> {
    let c = config(1, eta)?;
    let asf = derive_asf(&c.certificate().map_err(|e| e.to_string())?, c.timing(), eta, FreeParameters::default())
        .map_err(|e| e.to_string())?;
    Ok(to_max_form(&asf, psi, c.input_bound()).map_err(|e| e.to_string())?.eps_hat)
}

#[wasm_bindgen(js_name = precisionCurve)]
pub fn precision_curve_js(case: u8, eta_min: f64, eta_max: f64, steps: usize, psi: f64) -> Result<Vec<f64>, JsError> {
    precision_curve(case, eta_min, eta_max, steps, psi).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = controllerDomain)]
pub fn controller_domain_js(case: u8, eta: f64) -> Result<Vec<f64>, JsError> {
    controller_domain(case, eta).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = trajectory)]
pub fn trajectory_js(case: u8, eta: f64, x0: f64, horizon: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    trajectory(case, eta, x0, horizon, u64::from(seed)).map_err(|e| JsError::new(&e))
}
