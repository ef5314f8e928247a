//! Built-in example systems and configuration loading.
//!
//! State order is fixed per system and is the row/column order of `Q`:
//!
//! * `linear_1d`: `ẋ = −x + Z`, states `Z = (+1, −1)`.
//! * `cstr_2d`: stirred-tank reactor, states `Z = (−0.15, 0, +0.15)`.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::flow::{IntegratorSettings, VectorFieldFamily};
use crate::grid::Grid;
use crate::hybrid::HybridSystemSpec;
use crate::markov::{MarkovError, TransitionMatrix};
use crate::Error;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("unknown system `{name}` (available: {})", available.join(", "))]
    UnknownSystem { name: String, available: Vec<String> },
    #[error("config error at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("transition matrix: {0}")]
    Markov(#[from] MarkovError),
    #[error("{system} needs a {expected}x{expected} transition matrix, got {got}x{got}")]
    SizeMismatch { system: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Spec(#[from] Error),
}

impl SystemError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::SchemaViolation { path: path.into(), message: message.into() }
    }
}

/// `(+1, −1)`: index 0 is `Z = +1`.
pub const LINEAR_1D_STATES: [f64; 2] = [1.0, -1.0];

/// `(−0.15, 0, +0.15)`.
pub const CSTR_STATES: [f64; 3] = [-0.15, 0.0, 0.15];

/// `Q₁` from the 1-D example.
pub fn reference_linear_transition() -> TransitionMatrix {
    TransitionMatrix::new(&[[0.4, 0.6], [0.5, 0.5]]).expect("valid matrix")
}

/// Every row `(0.3, 0.3, 0.4)`.
pub fn reference_cstr_transition() -> TransitionMatrix {
    TransitionMatrix::new(&[[0.3, 0.3, 0.4]; 3]).expect("valid matrix")
}

/// `ẋ = −x + Z` with its closed-form flow `x(t) = Z + (x₀ − Z) e^{−t}`.
pub fn linear_1d_fields() -> VectorFieldFamily {
    VectorFieldFamily::new(1, LINEAR_1D_STATES.to_vec(), |x, s, out| {
        out[0] = -x[0] + LINEAR_1D_STATES[s];
    })
    .with_analytic_flow(|x, s, t, out| {
        let z = LINEAR_1D_STATES[s];
        out[0] = z + (x[0] - z) * (-t).exp();
    })
}

/// Default 1-D domain: `[−3, 3]` in 200 cells.
pub fn linear_1d_domain() -> Grid {
    Grid::new(vec![-3.0], vec![3.0], vec![200]).expect("valid grid")
}

pub fn build_linear_1d(q: TransitionMatrix, h: f64) -> Result<HybridSystemSpec, SystemError> {
    if q.size() != 2 {
        return Err(SystemError::SizeMismatch { system: "linear_1d", expected: 2, got: q.size() });
    }
    Ok(HybridSystemSpec::new(
        "linear_1d",
        linear_1d_fields(),
        q,
        h,
        linear_1d_domain(),
        IntegratorSettings::default_for_period(h),
    )?)
}

/// Parameters of the reactor model
///
/// ```text
/// ẋ₁ = −λ x₁ − β (x₁ − x_c) + B·Da·f(x₁, x₂) + Z (1 − x₁)
/// ẋ₂ = −λ x₂ + Da·f(x₁, x₂),        f = (1 − x₂) e^{x₁}
/// ```
///
/// The defaults reproduce
/// `ẋ₁ = −x₁ − .15(x₁−1) + .35(1−x₂)e^{x₁} + Z(1−x₁)`,
/// `ẋ₂ = −x₂ + .05(1−x₂)e^{x₁}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstrParams {
    pub lambda: f64,
    pub beta: f64,
    pub x_c: f64,
    pub b: f64,
    pub da: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self { lambda: 1.0, beta: 0.15, x_c: 1.0, b: 7.0, da: 0.05 }
    }
}

impl CstrParams {
    const NAMES: [&'static str; 5] = ["lambda", "beta", "x_c", "b", "da"];

    fn set(&mut self, name: &str, v: f64) -> bool {
        match name {
            "lambda" => self.lambda = v,
            "beta" => self.beta = v,
            "x_c" => self.x_c = v,
            "b" => self.b = v,
            "da" => self.da = v,
            _ => return false,
        }
        true
    }
}

pub fn cstr_fields(p: CstrParams) -> VectorFieldFamily {
    let bda = p.b * p.da;
    VectorFieldFamily::new(2, CSTR_STATES.to_vec(), move |x, s, out| {
        let rate = (1.0 - x[1]) * x[0].exp();
        out[0] = -p.lambda * x[0] - p.beta * (x[0] - p.x_c) + bda * rate + CSTR_STATES[s] * (1.0 - x[0]);
        out[1] = -p.lambda * x[1] + p.da * rate;
    })
}

/// Default reactor domain: `[0, 8] × [0, 1.2]` in 100 × 100 cells.
pub fn cstr_domain() -> Grid {
    Grid::new(vec![0.0, 0.0], vec![8.0, 1.2], vec![100, 100]).expect("valid grid")
}

pub fn build_cstr_2d(q: TransitionMatrix, h: f64) -> Result<HybridSystemSpec, SystemError> {
    build_cstr_2d_with(q, h, CstrParams::default())
}

pub fn build_cstr_2d_with(q: TransitionMatrix, h: f64, params: CstrParams) -> Result<HybridSystemSpec, SystemError> {
    if q.size() != 3 {
        return Err(SystemError::SizeMismatch { system: "cstr_2d", expected: 3, got: q.size() });
    }
    Ok(HybridSystemSpec::new(
        "cstr_2d",
        cstr_fields(params),
        q,
        h,
        cstr_domain(),
        IntegratorSettings::default_for_period(h),
    )?)
}

/// A named built-in system.
#[derive(Debug, Clone, Copy)]
pub struct SystemCatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    /// Annotated configuration using the default parameters.
    pub example_config: &'static str,
    pub param_names: &'static [&'static str],
}

pub const CATALOG: [SystemCatalogEntry; 2] = [
    SystemCatalogEntry {
        name: "linear_1d",
        description: "dx/dt = -x + Z, Z in (+1, -1)",
        example_config: LINEAR_1D_EXAMPLE,
        param_names: &[],
    },
    SystemCatalogEntry {
        name: "cstr_2d",
        description: "two-variable stirred-tank reactor, Z in (-0.15, 0, 0.15)",
        example_config: CSTR_2D_EXAMPLE,
        param_names: &CstrParams::NAMES,
    },
];

const LINEAR_1D_EXAMPLE: &str = r#"# dx/dt = -x + Z.  State 0 is Z = +1, state 1 is Z = -1.
system = "linear_1d"

# Switching period.
h = 1.0

# Row i gives P(i -> j); rows must sum to 1.
transition = [
  [0.4, 0.6],
  [0.5, 0.5],
]

# Histogram / limit-set grid (optional; these are the defaults).
[domain]
lo = [-3.0]
hi = [3.0]
bins = [200]

# Fixed-step RK4; step must not exceed h. Default h / 100.
# linear_1d uses its closed-form flow regardless.
[integrator]
step = 0.01
"#;

const CSTR_2D_EXAMPLE: &str = r#"# Stirred-tank reactor.  States: 0 -> Z = -0.15, 1 -> Z = 0, 2 -> Z = +0.15.
system = "cstr_2d"
h = 1.0
transition = [
  [0.3, 0.3, 0.4],
  [0.3, 0.3, 0.4],
  [0.3, 0.3, 0.4],
]

[domain]
lo = [0.0, 0.0]
hi = [8.0, 1.2]
bins = [100, 100]

[integrator]
step = 0.01

# dx1/dt = -lambda x1 - beta (x1 - x_c) + b da (1 - x2) e^x1 + Z (1 - x1)
# dx2/dt = -lambda x2 + da (1 - x2) e^x1
[params]
lambda = 1.0
beta = 0.15
x_c = 1.0
b = 7.0
da = 0.05
"#;

/// Parsed (not yet validated) configuration document.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub system: String,
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub bins: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub step: Option<f64>,
    pub method: Option<String>,
}

pub fn parse_config(document: &str) -> Result<SystemConfig, SystemError> {
    let de =
        toml::Deserializer::parse(document).map_err(|e| SystemError::schema("<document>", e.message().to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().message().to_string();
        SystemError::schema(if path == "." { "<document>".into() } else { path }, message)
    })
}

/// Parses and validates a configuration document into a system.
pub fn load_system(document: &str) -> Result<HybridSystemSpec, SystemError> {
    build_from_config(&parse_config(document)?)
}

pub fn build_from_config(cfg: &SystemConfig) -> Result<HybridSystemSpec, SystemError> {
    let entry = CATALOG.iter().find(|e| e.name == cfg.system).ok_or_else(|| SystemError::UnknownSystem {
        name: cfg.system.clone(),
        available: CATALOG.iter().map(|e| e.name.to_string()).collect(),
    })?;
    for key in cfg.params.keys() {
        if !entry.param_names.contains(&key.as_str()) {
            return Err(SystemError::schema(format!("params.{key}"), format!("unknown parameter for {}", entry.name)));
        }
    }
    let h = cfg.h.unwrap_or(1.0);
    if !(h > 0.0 && h.is_finite()) {
        return Err(SystemError::schema("h", format!("switching period must be positive, got {h}")));
    }
    let q = match &cfg.transition {
        Some(rows) => TransitionMatrix::new(rows)?,
        None => match entry.name {
            "linear_1d" => reference_linear_transition(),
            _ => reference_cstr_transition(),
        },
    };
    let built = match entry.name {
        "linear_1d" => build_linear_1d(q, h),
        _ => {
            let mut p = CstrParams::default();
            for (k, v) in &cfg.params {
                p.set(k, *v);
            }
            build_cstr_2d_with(q, h, p)
        }
    };
    let mut spec = built.map_err(|e| match e {
        SystemError::SizeMismatch { .. } => SystemError::schema("transition", e.to_string()),
        other => other,
    })?;

    if let Some(d) = &cfg.domain {
        let base = spec.domain().clone();
        let lo = d.lo.clone().unwrap_or_else(|| base.lo().to_vec());
        let hi = d.hi.clone().unwrap_or_else(|| base.hi().to_vec());
        let bins = d.bins.clone().unwrap_or_else(|| base.bins().to_vec());
        for (name, len) in [("domain.lo", lo.len()), ("domain.hi", hi.len()), ("domain.bins", bins.len())] {
            if len != spec.dim() {
                return Err(SystemError::schema(name, format!("expected {} values, got {len}", spec.dim())));
            }
        }
        let grid = Grid::new(lo, hi, bins).map_err(|e| SystemError::schema("domain", e.to_string()))?;
        spec = spec.with_domain(grid)?;
    }
    if let Some(ic) = &cfg.integrator {
        if let Some(m) = &ic.method {
            if !m.eq_ignore_ascii_case("rk4") {
                return Err(SystemError::schema("integrator.method", format!("unsupported method `{m}`")));
            }
        }
        if let Some(step) = ic.step {
            let settings = IntegratorSettings::rk4(step);
            settings.validate(h).map_err(|e| SystemError::schema("integrator.step", e.to_string()))?;
            spec = HybridSystemSpec::new(
                spec.name().to_string(),
                spec.fields().clone(),
                spec.transition().clone(),
                h,
                spec.domain().clone(),
                settings,
            )?;
        }
    }
    Ok(spec)
}
