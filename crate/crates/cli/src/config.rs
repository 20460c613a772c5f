//! Run configuration: strict JSON schema, defaults, validation with paths and
//! byte-stable emission.

use kicksim_core::dynamics::InitialSpec;
use kicksim_core::model::ModelConfig;
use kicksim_core::{JumpFamily, KickSpec, ModelSpec, PeriodicFn, PotentialSpec};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default)]
    pub clt: CltSection,
    #[serde(default)]
    pub drift: DriftSection,
    #[serde(default)]
    pub incursions: IncursionSection,
    #[serde(default)]
    pub records: RecordsSection,
    #[serde(default)]
    pub flatten: FlattenSection,
    /// Output directory, overridden by `--out`.
    #[serde(default = "default_output")]
    pub output: String,
}

fn default_seed() -> u64 {
    1
}

fn default_output() -> String {
    "kicksim-out".into()
}

/// Zero potential with homogeneous Laplace kicks.
pub fn default_model() -> ModelConfig {
    ModelSpec::free_homogeneous().config().clone()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    /// Horizon `t`.
    pub t: f64,
    /// Trajectories `N`.
    pub n: usize,
    pub s_grid: Vec<f64>,
    /// Integrator step for tabulated potentials and near-separatrix orbits.
    pub h: f64,
    /// Energy tolerance per flow segment.
    pub energy_tol: f64,
    pub initial: InitialSpec,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            t: 1000.0,
            n: 10_000,
            s_grid: vec![0.25, 0.5, 0.75, 1.0],
            h: 1e-3,
            energy_tol: 1e-8,
            initial: InitialSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    pub grid: usize,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection { grid: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CltSection {
    pub resamples: usize,
    /// Significance level of the KS tests.
    pub alpha: f64,
    /// Relative tolerance on the covariance at `s = 1`.
    pub covariance_tolerance: f64,
}

impl Default for CltSection {
    fn default() -> Self {
        CltSection {
            resamples: 400,
            alpha: 0.01,
            covariance_tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    pub horizons: Vec<f64>,
    pub n: usize,
    pub resamples: usize,
}

impl Default for DriftSection {
    fn default() -> Self {
        DriftSection {
            horizons: vec![100.0, 1000.0, 10_000.0],
            n: 2000,
            resamples: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncursionSection {
    pub horizons: Vec<f64>,
    pub n: usize,
    pub lower_exponent: f64,
    pub upper_exponent: f64,
    /// Relative slack on the count bound.
    pub slack: f64,
    /// Trajectories at the largest horizon whose incursions go to CSV.
    pub csv_trajectories: usize,
}

impl Default for IncursionSection {
    fn default() -> Self {
        IncursionSection {
            horizons: vec![100.0, 1000.0, 10_000.0],
            n: 2000,
            lower_exponent: 0.25,
            upper_exponent: 0.25,
            slack: 0.2,
            csv_trajectories: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecordsSection {
    pub levels: Vec<f64>,
    pub records: usize,
    pub samples: usize,
    pub resamples: usize,
    pub bins: usize,
    /// Directory for cached ladder tables.
    pub cache_dir: Option<String>,
    /// Momentum levels for the torus crossing scan; empty skips it.
    pub torus_levels: Vec<f64>,
    pub torus_samples: usize,
    /// Largest allowed L1 distance at the top level.
    pub l1_tolerance: f64,
    /// Largest allowed L1 distance to the exponential law for Laplace walks.
    pub memoryless_tolerance: f64,
}

impl Default for RecordsSection {
    fn default() -> Self {
        RecordsSection {
            levels: vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            records: 1_000_000,
            samples: 1_000_000,
            resamples: 50,
            bins: 256,
            cache_dir: None,
            torus_levels: vec![],
            torus_samples: 20_000,
            l1_tolerance: 0.05,
            memoryless_tolerance: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlattenSection {
    /// `[k, samples]` pairs.
    pub momenta: Vec<(f64, usize)>,
    pub bins: usize,
    pub x0: f64,
    pub slack: f64,
    pub slope_range: (f64, f64),
}

impl Default for FlattenSection {
    fn default() -> Self {
        FlattenSection {
            momenta: vec![(10.0, 1_000_000), (100.0, 10_000_000), (1000.0, 100_000_000)],
            bins: 10,
            x0: 0.0,
            slack: 0.5,
            slope_range: (-1.3, -0.7),
        }
    }
}

/// One schema violation.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
pub struct ConfigErrors(pub Vec<SchemaError>);

fn err(path: &str, message: impl Into<String>) -> SchemaError {
    SchemaError {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigErrors(vec![err(&path, e.inner().to_string())])
    })?;
    let errors = cfg.validate();
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errors))
    }
}

/// Pretty JSON with shortest round-trip numbers and a trailing newline.
pub fn emit_config(cfg: &RunConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

fn periodic_range(f: &PeriodicFn) -> (f64, f64) {
    f.range(4096)
}

fn positive(errors: &mut Vec<SchemaError>, path: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errors.push(err(path, format!("must be positive and finite, got {v}")));
    }
}

fn horizons(errors: &mut Vec<SchemaError>, path: &str, hs: &[f64]) {
    if hs.len() < 3 {
        errors.push(err(path, "needs at least 3 horizons"));
    }
    if hs.iter().any(|h| !(*h > 0.0 && h.is_finite())) || hs.windows(2).any(|w| w[0] >= w[1]) {
        errors.push(err(path, "horizons must be positive and increasing"));
    }
}

impl RunConfig {
    pub fn model_spec(&self) -> kicksim_core::Result<ModelSpec> {
        ModelSpec::new(self.model.clone())
    }

    pub fn validate(&self) -> Vec<SchemaError> {
        let mut e = Vec::new();
        self.validate_model(&mut e);
        let s = &self.simulation;
        positive(&mut e, "simulation.t", s.t);
        if s.n == 0 {
            e.push(err("simulation.n", "must be at least 1"));
        }
        if s.s_grid.is_empty()
            || s.s_grid.iter().any(|x| !(*x > 0.0 && *x <= 1.0))
            || s.s_grid.windows(2).any(|w| w[0] >= w[1])
        {
            e.push(err("simulation.s_grid", "must be increasing values in (0, 1]"));
        }
        positive(&mut e, "simulation.h", s.h);
        positive(&mut e, "simulation.energy_tol", s.energy_tol);
        if let InitialSpec::Gaussian { sd_x, sd_k, .. } = s.initial {
            if !(sd_x >= 0.0 && sd_k >= 0.0) {
                e.push(err("simulation.initial", "standard deviations must be non-negative"));
            }
        }
        if self.validation.grid < 64 {
            e.push(err("validation.grid", "must be at least 64"));
        }
        let c = &self.clt;
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            e.push(err("clt.alpha", "must lie in (0, 1)"));
        }
        positive(&mut e, "clt.covariance_tolerance", c.covariance_tolerance);
        horizons(&mut e, "drift.horizons", &self.drift.horizons);
        if self.drift.n == 0 {
            e.push(err("drift.n", "must be at least 1"));
        }
        let i = &self.incursions;
        horizons(&mut e, "incursions.horizons", &i.horizons);
        if i.n == 0 {
            e.push(err("incursions.n", "must be at least 1"));
        }
        positive(&mut e, "incursions.lower_exponent", i.lower_exponent);
        positive(&mut e, "incursions.upper_exponent", i.upper_exponent);
        if !(i.slack >= 0.0) {
            e.push(err("incursions.slack", "must be non-negative"));
        }
        let r = &self.records;
        if r.levels.is_empty()
            || r.levels.iter().any(|l| !(*l >= 0.0 && l.is_finite()))
            || r.levels.windows(2).any(|w| w[0] >= w[1])
        {
            e.push(err("records.levels", "must be non-negative and increasing"));
        }
        if r.records < kicksim_core::records::MIN_RECORDS {
            e.push(err("records.records", format!("must be at least {}", kicksim_core::records::MIN_RECORDS)));
        }
        if r.samples == 0 {
            e.push(err("records.samples", "must be at least 1"));
        }
        if r.bins < kicksim_core::records::COARSE_BINS || r.bins % kicksim_core::records::COARSE_BINS != 0 {
            e.push(err("records.bins", "must be a multiple of 32"));
        }
        if r.torus_levels.iter().any(|l| !(*l > 0.0)) || r.torus_levels.windows(2).any(|w| w[0] >= w[1]) {
            e.push(err("records.torus_levels", "must be positive and increasing"));
        }
        if !r.torus_levels.is_empty() && r.torus_samples == 0 {
            e.push(err("records.torus_samples", "must be at least 1"));
        }
        let f = &self.flatten;
        if f.momenta.is_empty() || f.momenta.iter().any(|(k, n)| !(k.abs() > 0.0 && k.is_finite()) || *n == 0) {
            e.push(err("flatten.momenta", "needs [k, samples] pairs with k != 0 and samples > 0"));
        }
        if f.bins < 2 {
            e.push(err("flatten.bins", "must be at least 2"));
        }
        if !(f.slope_range.0 < f.slope_range.1) {
            e.push(err("flatten.slope_range", "lower end must be below upper end"));
        }
        e
    }

    fn validate_model(&self, e: &mut Vec<SchemaError>) {
        let before = e.len();
        match &self.model.potential {
            PotentialSpec::Cosine { amplitude, .. } => {
                if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                    e.push(err("model.potential.amplitude", "must be non-negative and finite"));
                }
            }
            PotentialSpec::Tabulated { values, .. } => {
                if values.len() < 4 || values.iter().any(|v| !v.is_finite()) {
                    e.push(err("model.potential.values", "needs at least 4 finite values"));
                }
            }
            PotentialSpec::Zero { .. } => {}
        }
        let KickSpec { rate, coin, jumps } = &self.model.kicks;
        positive(e, "model.kicks.rate", *rate);
        let (lo, hi) = periodic_range(coin);
        if !(lo > 0.0 && hi <= 1.0) {
            e.push(err("model.kicks.coin", format!("values must lie in (0, 1], observed [{lo}, {hi}]")));
        }
        match jumps {
            JumpFamily::Laplace { scale } => {
                if !(periodic_range(scale).0 > 0.0) {
                    e.push(err("model.kicks.jumps.scale", "must be positive everywhere"));
                }
            }
            JumpFamily::GaussianMixture { components } => {
                for (i, c) in components.iter().enumerate() {
                    if !(c.weight >= 0.0) {
                        e.push(err(&format!("model.kicks.jumps.components[{i}].weight"), "must be non-negative"));
                    }
                    if !(periodic_range(&c.sd).0 >= 0.0) {
                        e.push(err(&format!("model.kicks.jumps.components[{i}].sd"), "must be non-negative"));
                    }
                }
            }
            JumpFamily::Tabulated { v_max, .. } => positive(e, "model.kicks.jumps.v_max", *v_max),
            JumpFamily::Skewed { .. } => {}
        }
        // anything the model constructor still rejects
        if e.len() == before {
            if let Err(x) = self.model_spec() {
                e.push(err("model", x.to_string()));
            }
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config("{}").expect("defaults are valid")
    }
}
