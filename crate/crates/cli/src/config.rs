//! Configuration: built-in defaults at the published operating point,
//! optional TOML file, flag overrides — in that precedence order (flags win).

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Deserialize;

use cloakq_core::desim::RetryPolicy;
use cloakq_core::geometry::{EdgeRuleKind, GeometryConfig, ToleranceModel};
use cloakq_core::params::Region;

use crate::error::CliError;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "CLOAKQ_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Bernoulli,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeRule {
    Containment,
    Avgdist,
    Mmb,
}

impl EdgeRule {
    pub fn kind(self) -> EdgeRuleKind {
        match self {
            EdgeRule::Containment => EdgeRuleKind::MutualContainment,
            EdgeRule::Avgdist => EdgeRuleKind::AverageDistance,
            EdgeRule::Mmb => EdgeRuleKind::Mmb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Retry {
    Immediate,
    WaitForArrival,
}

impl Retry {
    pub fn policy(self) -> RetryPolicy {
        match self {
            Retry::Immediate => RetryPolicy::Immediate,
            Retry::WaitForArrival => RetryPolicy::WaitForArrival,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    Ctmc,
    Paper,
    Distribution,
}

/// The fully merged settings a subcommand runs with.
#[derive(Debug, Clone)]
pub struct RunConfig {
    // core
    pub lambda: f64,
    pub mu: f64,
    pub k: usize,
    pub r: f64,
    // desim
    pub horizon: f64,
    pub warmup: f64,
    pub reps: u32,
    pub seed: u64,
    pub mode: Mode,
    pub window: Option<usize>,
    pub retry: Retry,
    // geometry
    pub region_x: f64,
    pub region_y: f64,
    pub tol_dx: f64,
    pub tol_dy: f64,
    pub edge_rule: EdgeRule,
    pub mmb_area: f64,
    pub samples: u64,
    // validate
    pub bound: f64,
    pub reference: Reference,
    // output
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            mu: 10.0,
            k: 3,
            r: 0.33,
            horizon: 2e5,
            warmup: 1e4,
            reps: 20,
            seed: 42,
            mode: Mode::Bernoulli,
            window: None,
            retry: Retry::Immediate,
            region_x: 1.0,
            region_y: 1.0,
            tol_dx: 0.2,
            tol_dy: 0.2,
            edge_rule: EdgeRule::Containment,
            mmb_area: 0.04,
            samples: 100_000,
            bound: 0.02,
            reference: Reference::Ctmc,
            format: Format::Csv,
            out: None,
        }
    }
}

impl RunConfig {
    /// The geometric configuration implied by the geometry settings, for
    /// a batch size of `k` (passed in because sweeps vary it).
    pub fn geometry(&self, k: usize) -> Result<GeometryConfig<f64>, CliError> {
        let region = Region::new(self.region_x, self.region_y)?;
        let mmb_areas = match self.edge_rule {
            EdgeRule::Mmb => Some(vec![self.mmb_area; k]),
            _ => None,
        };
        Ok(GeometryConfig {
            region,
            k,
            tolerances: ToleranceModel::Fixed(vec![(self.tol_dx, self.tol_dy); k]),
            edge_rule: self.edge_rule.kind(),
            mmb_areas,
        })
    }
}

/// The config file: same keys as the flags, grouped by module. Unknown
/// keys are rejected so typos fail loudly instead of being ignored.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    core: CoreSection,
    #[serde(default)]
    desim: DesimSection,
    #[serde(default)]
    geometry: GeometrySection,
    #[serde(default)]
    validate: ValidateSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoreSection {
    lambda: Option<f64>,
    mu: Option<f64>,
    k: Option<usize>,
    r: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesimSection {
    horizon: Option<f64>,
    warmup: Option<f64>,
    reps: Option<u32>,
    seed: Option<u64>,
    mode: Option<Mode>,
    window: Option<usize>,
    retry: Option<Retry>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometrySection {
    region_x: Option<f64>,
    region_y: Option<f64>,
    tol_dx: Option<f64>,
    tol_dy: Option<f64>,
    edge_rule: Option<EdgeRule>,
    mmb_area: Option<f64>,
    samples: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidateSection {
    bound: Option<f64>,
    reference: Option<Reference>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    format: Option<Format>,
    out: Option<PathBuf>,
}

impl FileConfig {
    /// Loads the file named by `--config`, falling back to the
    /// `CLOAKQ_CONFIG` environment variable, then to no file at all.
    /// An explicitly named file must exist; the environment fallback
    /// must too (pointing the variable at a missing file is a mistake
    /// worth surfacing).
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).map(PathBuf::from),
        };
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| {
            CliError::Config(format!("config file {}: {e}", path.display()))
        })
    }

    /// Applies the file's settings on top of the defaults.
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! take {
            ($($section:ident . $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$section.$field.clone() {
                    cfg.$field = v.into();
                })*
            };
        }
        take!(
            core.lambda,
            core.mu,
            core.k,
            core.r,
            desim.horizon,
            desim.warmup,
            desim.reps,
            desim.seed,
            desim.mode,
            desim.retry,
            geometry.region_x,
            geometry.region_y,
            geometry.tol_dx,
            geometry.tol_dy,
            geometry.edge_rule,
            geometry.mmb_area,
            geometry.samples,
            validate.bound,
            validate.reference,
            output.format,
        );
        if self.desim.window.is_some() {
            cfg.window = self.desim.window;
        }
        if self.output.out.is_some() {
            cfg.out = self.output.out.clone();
        }
    }
}
