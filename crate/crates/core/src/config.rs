//! Run configuration in a line-oriented `key = value` format.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line   := blank | comment | entry
//! entry  := key "=" value [comment]
//! key    := name | name "." name
//! value  := number | list | word
//! list   := number ("," number)*
//! comment:= "#" ...
//! ```
//!
//! Recognised keys:
//!
//! | key | value |
//! |-----|-------|
//! | `name` | free label |
//! | `model` | registered model name |
//! | `model.<param>` | model parameter |
//! | `tau`, `p1`, `p2`, `eta` | timing and grid |
//! | `inputs` | explicit input list |
//! | `input.min`, `input.max`, `input.mu` | input range with spacing (instead of `inputs`) |
//! | `psi_l`, `psi_u` | safe box corners (lists for `n > 1`) |
//! | `domain.lower`, `domain.upper` | abstraction domain, default the safe box |
//! | `asf.psi` | number or `auto` |
//! | `asf.epsilon`, `asf.delta` | number or `auto` |
//! | `integrator.h_max` | number or `auto` (`tau / 10`) |
//! | `run.seed`, `run.horizon`, `run.trials` | simulation settings |
//! | `run.x0` | initial state, default the safe-box midpoint |
//! | `deflate` | `true` or `false` |
//! | `reference.eps_hat` | reference precision for comparison |

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;

use thiserror::Error;

use crate::certificates::{FreeParameters, PsiChoice, StabilityCertificate, Timing};
use crate::dynamics::{model_from_registry, Dynamics, DynamicsError, ImpulsiveSystem, IntegratorConfig};
use crate::geometry::{AxisBox, GeometryError, GridDomain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing key '{0}'")]
    Missing(String),
    #[error("invalid value for '{key}': {message}")]
    Invalid { key: String, message: String },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    List(Vec<f64>),
    Range { min: f64, max: f64, mu: f64 },
}

impl InputSpec {
    /// Finite input set, ascending for ranges.
    pub fn values(&self) -> Vec<f64> {
        match *self {
            InputSpec::List(ref v) => v.clone(),
            InputSpec::Range { min, max, mu } => {
                let count = ((max - min) / mu + 1e-9).floor() as i64;
                (0..=count).map(|k| min + k as f64 * mu).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsfSettings {
    /// `None` searches a lattice.
    pub psi: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub seed: u64,
    pub horizon: usize,
    pub trials: usize,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: Option<String>,
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub tau: f64,
    pub p1: usize,
    pub p2: usize,
    pub eta: f64,
    pub inputs: InputSpec,
    pub psi_l: Vec<f64>,
    pub psi_u: Vec<f64>,
    pub domain: Option<(Vec<f64>, Vec<f64>)>,
    pub asf: AsfSettings,
    pub h_max: Option<f64>,
    pub run: RunSettings,
    pub deflate: bool,
    pub reference_eps_hat: Option<f64>,
}

const DEFAULT_PSI: f64 = 0.99;

/// Built-in storage-delivery cases. `low_gain` switches case 1 to the alternative gains `c = d = 5`.
pub fn builtin_case(case: u8, low_gain: bool) -> Option<RunConfig> {
    let (p1, p2, a, b, cd, psi_l, eps_ref) = match case {
        1 => (1, 5, -0.2, 0.9, if low_gain { 5.0 } else { 10.0 }, 25.0, 0.25),
        2 => (5, 7, -0.3, 1.01, 15.0, 50.0, 0.75),
        3 => (1, 2, 0.2, 0.85, 15.0, 75.0, 0.65),
        _ => return None,
    };
    let params = [("a", a), ("b", b), ("c", cd), ("d", cd)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Some(RunConfig {
        name: Some(format!("case{case}")),
        model: "storage-delivery".into(),
        params,
        tau: 0.2,
        p1,
        p2,
        eta: 0.01,
        inputs: InputSpec::List(vec![-1.0, 0.0, 1.0]),
        psi_l: vec![psi_l],
        psi_u: vec![psi_l + 25.0],
        domain: None,
        asf: AsfSettings { psi: Some(DEFAULT_PSI), epsilon: None, delta: None },
        h_max: None,
        run: RunSettings { seed: 0, horizon: 200, trials: 100, x0: None },
        deflate: true,
        reference_eps_hat: Some(eps_ref),
    })
}

impl RunConfig {
    pub fn dynamics(&self) -> Result<Arc<dyn Dynamics>, ConfigError> {
        Ok(model_from_registry(&self.model, &self.params)?)
    }

    pub fn system(&self) -> Result<ImpulsiveSystem, ConfigError> {
        let sys = ImpulsiveSystem::new(self.dynamics()?, self.tau, self.p1, self.p2, self.inputs.values())?;
        Ok(sys.with_integrator(IntegratorConfig { h_max: self.h_max, ..IntegratorConfig::default() }))
    }

    /// Max-norm certificate of the configured model.
    pub fn certificate(&self) -> Result<StabilityCertificate, ConfigError> {
        let get = |k: &str| self.params.get(k).copied().ok_or_else(|| ConfigError::Missing(format!("model.{k}")));
        match self.model.as_str() {
            "storage-delivery" => Ok(StabilityCertificate::storage(get("a")?, get("b")?, get("c")?, get("d")?)),
            "pure-linear-nd" => {
                let n = self.dynamics()?.dim();
                let coeff = |p: &str| (0..n).map(|i| get(&format!("{p}{i}"))).collect::<Result<Vec<_>, _>>();
                Ok(StabilityCertificate::diagonal_linear(&coeff("a")?, &coeff("b")?, &coeff("c")?, &coeff("d")?))
            }
            other => Err(DynamicsError::UnknownModel(other.to_string()).into()),
        }
    }

    pub fn timing(&self) -> Timing {
        Timing { tau: self.tau, p1: self.p1, p2: self.p2 }
    }

    pub fn free_parameters(&self) -> FreeParameters {
        FreeParameters { epsilon: self.asf.epsilon, delta: self.asf.delta }
    }

    pub fn psi_choice(&self) -> PsiChoice {
        self.asf.psi.map_or(PsiChoice::Search, PsiChoice::Fixed)
    }

    pub fn safe_box(&self) -> Result<AxisBox, ConfigError> {
        Ok(AxisBox::new(self.psi_l.clone(), self.psi_u.clone())?)
    }

    pub fn grid_domain(&self) -> Result<GridDomain, ConfigError> {
        let b = match &self.domain {
            Some((lo, hi)) => AxisBox::new(lo.clone(), hi.clone())?,
            None => self.safe_box()?,
        };
        Ok(GridDomain::single(b, self.eta)?)
    }

    pub fn input_bound(&self) -> f64 {
        self.inputs.values().iter().fold(0.0, |m, u| m.max(u.abs()))
    }

    pub fn initial_state(&self) -> Result<Vec<f64>, ConfigError> {
        match &self.run.x0 {
            Some(x0) => Ok(x0.clone()),
            None => Ok(self.safe_box()?.midpoint()),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, message: format!("expected 'key = value', found '{content}'") })?;
            let (k, v) = (k.trim(), v.trim());
            let valid_key = !k.is_empty()
                && k.split('.').count() <= 2
                && k.split('.').all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            if !valid_key {
                return Err(ConfigError::Syntax { line, message: format!("invalid key '{k}'") });
            }
            if v.is_empty() {
                return Err(ConfigError::Syntax { line, message: format!("empty value for '{k}'") });
            }
            if map.insert(k.to_string(), (line, v.to_string())).is_some() {
                return Err(ConfigError::Syntax { line, message: format!("duplicate key '{k}'") });
            }
        }
        Reader { map }.finish()
    }

    /// Canonical text form; `parse` of the result yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let auto = |v: Option<f64>| v.map_or("auto".to_string(), |x| x.to_string());
        if let Some(name) = &self.name {
            let _ = writeln!(s, "name = {name}");
        }
        let _ = writeln!(s, "model = {}", self.model);
        for (k, v) in &self.params {
            let _ = writeln!(s, "model.{k} = {v}");
        }
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "p1 = {}", self.p1);
        let _ = writeln!(s, "p2 = {}", self.p2);
        let _ = writeln!(s, "eta = {}", self.eta);
        match &self.inputs {
            InputSpec::List(v) => {
                let _ = writeln!(s, "inputs = {}", list(v));
            }
            InputSpec::Range { min, max, mu } => {
                let _ = writeln!(s, "input.min = {min}\ninput.max = {max}\ninput.mu = {mu}");
            }
        }
        let _ = writeln!(s, "psi_l = {}", list(&self.psi_l));
        let _ = writeln!(s, "psi_u = {}", list(&self.psi_u));
        if let Some((lo, hi)) = &self.domain {
            let _ = writeln!(s, "domain.lower = {}\ndomain.upper = {}", list(lo), list(hi));
        }
        let _ = writeln!(s, "asf.psi = {}", auto(self.asf.psi));
        let _ = writeln!(s, "asf.epsilon = {}", auto(self.asf.epsilon));
        let _ = writeln!(s, "asf.delta = {}", auto(self.asf.delta));
        let _ = writeln!(s, "integrator.h_max = {}", auto(self.h_max));
        let _ = writeln!(s, "run.seed = {}", self.run.seed);
        let _ = writeln!(s, "run.horizon = {}", self.run.horizon);
        let _ = writeln!(s, "run.trials = {}", self.run.trials);
        if let Some(x0) = &self.run.x0 {
            let _ = writeln!(s, "run.x0 = {}", list(x0));
        }
        let _ = writeln!(s, "deflate = {}", self.deflate);
        if let Some(e) = self.reference_eps_hat {
            let _ = writeln!(s, "reference.eps_hat = {e}");
        }
        s
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

struct Reader {
    map: BTreeMap<String, (usize, String)>,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key).map(|(_, v)| v)
    }

    fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { key: key.to_string(), message: message.into() }
    }

    fn number<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
        v.parse().map_err(|_| Self::invalid(key, format!("'{v}' is not a valid number")))
    }

    fn finite(key: &str, v: &str) -> Result<f64, ConfigError> {
        let x: f64 = Self::number(key, v)?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Self::invalid(key, "must be finite"))
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ConfigError> {
        let v = self.take(key).ok_or_else(|| ConfigError::Missing(key.to_string()))?;
        Self::number(key, &v)
    }

    fn optional<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.take(key) {
            Some(v) => Self::number(key, &v),
            None => Ok(default),
        }
    }

    fn list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
        v.split(',').map(|t| Self::finite(key, t.trim())).collect()
    }

    fn auto(&mut self, key: &str, default: Option<f64>) -> Result<Option<f64>, ConfigError> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("auto") => Ok(None),
            Some(v) => Self::finite(key, v).map(Some),
        }
    }

    fn finish(mut self) -> Result<RunConfig, ConfigError> {
        let name = self.take("name");
        let model = self.take("model").ok_or_else(|| ConfigError::Missing("model".into()))?;
        let param_keys: Vec<String> = self.map.keys().filter(|k| k.starts_with("model.")).cloned().collect();
        let mut params = BTreeMap::new();
        for k in param_keys {
            let v = self.take(&k).unwrap();
            params.insert(k["model.".len()..].to_string(), Self::finite(&k, &v)?);
        }
        let tau: f64 = self.required("tau")?;
        let p1: usize = self.required("p1")?;
        let p2: usize = self.required("p2")?;
        let eta: f64 = self.required("eta")?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Self::invalid("tau", "must be positive"));
        }
        if !(p1 >= 1 && p1 <= p2) {
            return Err(Self::invalid("p2", "need 1 <= p1 <= p2"));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Self::invalid("eta", "must be positive"));
        }

        let list = self.take("inputs");
        let range = (self.take("input.min"), self.take("input.max"), self.take("input.mu"));
        let inputs = match (list, range) {
            (Some(v), (None, None, None)) => InputSpec::List(Self::list("inputs", &v)?),
            (None, (Some(lo), Some(hi), Some(mu))) => {
                let (min, max, mu) =
                    (Self::finite("input.min", &lo)?, Self::finite("input.max", &hi)?, Self::finite("input.mu", &mu)?);
                if !(mu > 0.0 && min <= max) {
                    return Err(Self::invalid("input.mu", "need mu > 0 and min <= max"));
                }
                InputSpec::Range { min, max, mu }
            }
            (None, (None, None, None)) => return Err(ConfigError::Missing("inputs".into())),
            _ => return Err(Self::invalid("inputs", "give either 'inputs' or all of input.min, input.max, input.mu")),
        };

        let psi_l = Self::list("psi_l", &self.take("psi_l").ok_or_else(|| ConfigError::Missing("psi_l".into()))?)?;
        let psi_u = Self::list("psi_u", &self.take("psi_u").ok_or_else(|| ConfigError::Missing("psi_u".into()))?)?;
        let domain = match (self.take("domain.lower"), self.take("domain.upper")) {
            (Some(lo), Some(hi)) => Some((Self::list("domain.lower", &lo)?, Self::list("domain.upper", &hi)?)),
            (None, None) => None,
            _ => return Err(Self::invalid("domain", "give both domain.lower and domain.upper")),
        };
        let asf = AsfSettings {
            psi: self.auto("asf.psi", Some(DEFAULT_PSI))?,
            epsilon: self.auto("asf.epsilon", None)?,
            delta: self.auto("asf.delta", None)?,
        };
        let h_max = self.auto("integrator.h_max", None)?;
        let run = RunSettings {
            seed: self.optional("run.seed", 0)?,
            horizon: self.optional("run.horizon", 200)?,
            trials: self.optional("run.trials", 1)?,
            x0: self.take("run.x0").map(|v| Self::list("run.x0", &v)).transpose()?,
        };
        let deflate = match self.take("deflate").as_deref() {
            None | Some("true") => true,
            Some("false") => false,
            Some(v) => return Err(Self::invalid("deflate", format!("'{v}' is not true or false"))),
        };
        let reference_eps_hat = self.take("reference.eps_hat").map(|v| Self::finite("reference.eps_hat", &v)).transpose()?;

        if let Some((k, (line, _))) = self.map.into_iter().next() {
            return Err(ConfigError::Syntax { line, message: format!("unknown key '{k}'") });
        }
        let config = RunConfig {
            name,
            model,
            params,
            tau,
            p1,
            p2,
            eta,
            inputs,
            psi_l,
            psi_u,
            domain,
            asf,
            h_max,
            run,
            deflate,
            reference_eps_hat,
        };
        if config.inputs.values().is_empty() {
            return Err(Self::invalid("inputs", "input set is empty"));
        }
        config.safe_box()?;
        Ok(config)
    }
}
