//! TOML run configuration: model parameters, yield spec, scan window, band
//! solver settings, verification grid and simulation settings, all validated
//! at load time. Unknown keys are rejected.

use crate::band::NewtonOptions;
use crate::barrier::ScanRange;
use crate::model::{ModelError, ModelParams, TabulatedYield, Yield};
use crate::sim::SimConfig;
use crate::verify::{GridSpec, VerifyOptions};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid model parameters: {0}")]
    Model(#[from] ModelError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Volatility may be written as a number or as the literal "sqrt2", since
/// the exact value of the square root is not representable as a short
/// decimal.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SigmaSpec {
    Number(f64),
    Literal(String),
}

impl SigmaSpec {
    fn value(&self) -> Result<f64, ConfigError> {
        match self {
            SigmaSpec::Number(v) => Ok(*v),
            SigmaSpec::Literal(s) if s == "sqrt2" => Ok(2.0_f64.sqrt()),
            SigmaSpec::Literal(s) => Err(ConfigError::Invalid(format!(
                "sigma must be a number or the literal \"sqrt2\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    mu: f64,
    sigma: SigmaSpec,
    r: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct YieldSection {
    kind: String,
    /// Sample points for kind = "table", as [x, eta(x)] pairs.
    points: Option<Vec<[f64; 2]>>,
}

impl Default for YieldSection {
    fn default() -> Self {
        Self { kind: "canonical".into(), points: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanSection {
    lo: Option<f64>,
    hi: Option<f64>,
    step: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BandSection {
    /// Initial guess (C1, C2, D, theta, lambda).
    guess: Option<Vec<f64>>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    multi_start: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifySection {
    lo: Option<f64>,
    hi: Option<f64>,
    step: Option<f64>,
    tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    dt: Option<f64>,
    horizon: Option<f64>,
    paths: Option<usize>,
    seed: Option<u64>,
    x0: Option<f64>,
    antithetic: Option<bool>,
    tail_tol: Option<f64>,
    allow_short_horizon: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelSection,
    #[serde(rename = "yield")]
    yield_spec: Option<YieldSection>,
    scan: Option<ScanSection>,
    band: Option<BandSection>,
    verify: Option<VerifySection>,
    sim: Option<SimSection>,
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: ModelParams,
    pub yield_fn: Yield,
    pub scan: ScanRange,
    pub band_guess: [f64; 5],
    pub band_opts: NewtonOptions,
    pub band_multi_start: bool,
    pub verify_grid: GridSpec,
    pub verify_opts: VerifyOptions,
    pub sim: SimConfig,
}

/// Default initial guess for the band solver at the canonical parameters.
pub const DEFAULT_BAND_GUESS: [f64; 5] = [7.0, 1.0, 8.0, 6.0, 8.0];

impl RunConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let params = ModelParams::new(raw.model.mu, raw.model.sigma.value()?, raw.model.r)?;

        let ys = raw.yield_spec.unwrap_or_default();
        let yield_fn = match ys.kind.as_str() {
            "canonical" => {
                if ys.points.is_some() {
                    return Err(ConfigError::Invalid(
                        "yield.points only applies to kind = \"table\"".into(),
                    ));
                }
                Yield::Canonical
            }
            "table" => {
                let pts = ys.points.ok_or_else(|| {
                    ConfigError::Invalid("yield.kind = \"table\" requires yield.points".into())
                })?;
                let pairs: Vec<(f64, f64)> = pts.iter().map(|p| (p[0], p[1])).collect();
                Yield::Tabulated(TabulatedYield::new(&pairs)?)
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "yield.kind must be \"canonical\" or \"table\", got {other:?}"
                )))
            }
        };

        let default_scan = ScanRange::default_for(&yield_fn);
        let scan = match raw.scan {
            Some(s) => ScanRange {
                lo: s.lo.unwrap_or(default_scan.lo),
                hi: s.hi.unwrap_or(default_scan.hi),
                step: s.step.unwrap_or(default_scan.step),
            },
            None => default_scan,
        };
        if !(scan.step > 0.0) || !(scan.hi > scan.lo) {
            return Err(ConfigError::Invalid(format!(
                "scan range malformed: lo={}, hi={}, step={}",
                scan.lo, scan.hi, scan.step
            )));
        }

        let mut band_guess = DEFAULT_BAND_GUESS;
        let mut band_opts = NewtonOptions::default();
        let mut band_multi_start = false;
        if let Some(b) = raw.band {
            if let Some(g) = b.guess {
                if g.len() != 5 {
                    return Err(ConfigError::Invalid(format!(
                        "band.guess must have exactly 5 entries (C1, C2, D, theta, lambda), got {}",
                        g.len()
                    )));
                }
                band_guess.copy_from_slice(&g);
            }
            if let Some(t) = b.tol {
                if !(t > 0.0) {
                    return Err(ConfigError::Invalid("band.tol must be > 0".into()));
                }
                band_opts.tol = t;
            }
            if let Some(m) = b.max_iter {
                band_opts.max_iter = m;
            }
            band_multi_start = b.multi_start.unwrap_or(false);
        }

        let mut verify_grid = GridSpec::default();
        let mut verify_opts = VerifyOptions::default();
        if let Some(v) = raw.verify {
            if let Some(lo) = v.lo {
                verify_grid.lo = lo;
            }
            if let Some(hi) = v.hi {
                verify_grid.hi = hi;
            }
            if let Some(step) = v.step {
                verify_grid.step = step;
            }
            if let Some(t) = v.tol {
                verify_opts.tol = t;
            }
        }
        if !(verify_grid.step > 0.0) || !(verify_grid.hi > verify_grid.lo) {
            return Err(ConfigError::Invalid("verify grid malformed".into()));
        }

        let mut sim = SimConfig::new(&params, 5.0);
        if let Some(s) = raw.sim {
            if let Some(dt) = s.dt {
                sim.dt = dt;
            }
            if let Some(h) = s.horizon {
                sim.horizon = h;
            }
            if let Some(n) = s.paths {
                sim.n_paths = n;
            }
            if let Some(seed) = s.seed {
                sim.seed = seed;
            }
            if let Some(x0) = s.x0 {
                sim.x0 = x0;
            }
            if let Some(a) = s.antithetic {
                sim.antithetic = a;
            }
            if let Some(t) = s.tail_tol {
                sim.tail_tol = t;
            }
            if let Some(a) = s.allow_short_horizon {
                sim.allow_short_horizon = a;
            }
        }

        Ok(Self {
            params,
            yield_fn,
            scan,
            band_guess,
            band_opts,
            band_multi_start,
            verify_grid,
            verify_opts,
            sim,
        })
    }
}
