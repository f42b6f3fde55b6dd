//! Run configuration: one TOML file per run, with `--section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scalesep_core::cell::CellConfig;
use scalesep_core::energy::{Initializer, MinimizeConfig, SequenceConfig};
use scalesep_core::field::Interface;
use scalesep_core::geodesic::GeodesicConfig;
use scalesep_core::potential::{PotentialConfig, PotentialSpec};
use scalesep_core::quadrature::QuadratureRule;
use scalesep_core::recovery::OdeConfig;

use crate::exit::Failure;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub jobs: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub potential: PotentialConfig,
    #[serde(default)]
    pub quadrature: QuadratureRule,
    #[serde(default)]
    pub whom: WhomSection,
    #[serde(default)]
    pub cell: CellConfig,
    #[serde(default)]
    pub weta: WetaSection,
    #[serde(default)]
    pub geodesic: GeodesicConfig,
    #[serde(default)]
    pub sigma: SigmaSection,
    #[serde(default)]
    pub domain: Option<DomainSection>,
    #[serde(default)]
    pub energy: Option<EnergySection>,
    #[serde(default)]
    pub minimize: MinimizeConfig,
    #[serde(default)]
    pub recovery: RecoverySection,
    #[serde(default)]
    pub sweep: SequenceConfig,
    #[serde(default)]
    pub validate: ValidateSection,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Tabulation grid for `W_hom`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhomSection {
    pub z_lo: Option<Vec<f64>>,
    pub z_hi: Option<Vec<f64>>,
    pub nodes: usize,
}

impl Default for WhomSection {
    fn default() -> Self {
        Self { z_lo: None, z_hi: None, nodes: 31 }
    }
}

/// Points and decreasing `eta` list for the cell problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WetaSection {
    pub z: Vec<Vec<f64>>,
    pub etas: Vec<f64>,
}

impl Default for WetaSection {
    fn default() -> Self {
        Self { z: Vec::new(), etas: vec![0.2, 0.1, 0.05] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaSection {
    /// `sigma_eta` is tabulated for these (decreasing) values; empty to skip.
    pub etas: Vec<f64>,
    /// Endpoints of the distance probe; default to the wells.
    pub p: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
    /// Relative slack of the monotonicity flag.
    pub monotone_tol: f64,
}

impl Default for SigmaSection {
    fn default() -> Self {
        Self { etas: Vec::new(), p: None, q: None, monotone_tol: 0.02 }
    }
}

/// Spatial box and interface used by minimize, recover and sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub interface: Interface,
    /// Grid spacing as a fraction of delta.
    #[serde(default = "quarter")]
    pub spacing_factor: f64,
}

fn quarter() -> f64 {
    0.25
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    pub epsilon: f64,
    pub delta: Option<f64>,
    #[serde(default)]
    pub mass_fraction: Option<f64>,
    #[serde(default = "default_init")]
    pub initializer: Initializer,
}

fn default_init() -> Initializer {
    Initializer::Step
}

impl EnergySection {
    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(self.epsilon * self.epsilon)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverySection {
    pub epsilon: f64,
    pub delta: Option<f64>,
    pub mass_fraction: Option<f64>,
    pub eta_factor: f64,
    pub ode: OdeConfig,
}

impl Default for RecoverySection {
    fn default() -> Self {
        Self { epsilon: 0.05, delta: None, mass_fraction: None, eta_factor: 0.01, ode: OdeConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub samples: usize,
    pub radius: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self { samples: 10_000, radius: 20.0 }
    }
}

impl RunConfig {
    /// Parse `text`, applying `overrides` (`section.key`, `value`) to the TOML tree first.
    pub fn parse(text: &str, overrides: &[(String, String)], base_dir: Option<&Path>) -> Result<Self, Failure> {
        let mut tree: toml::Table = text.parse().map_err(|e| Failure::config(format!("config: {e}")))?;
        for (key, value) in overrides {
            apply_override(&mut tree, key, value)?;
        }
        let mut cfg: RunConfig =
            toml::Value::Table(tree).try_into().map_err(|e| Failure::config(format!("config: {e}")))?;
        cfg.base_dir = base_dir.map(Path::to_path_buf);
        if cfg.jobs == 0 {
            return Err(Failure::config("jobs must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides, path.parent())
    }

    pub fn spec(&self) -> Result<PotentialSpec, Failure> {
        self.potential.to_spec(self.base_dir.as_deref()).map_err(|e| Failure::config(format!("potential: {e}")))
    }

    pub fn domain(&self) -> Result<&DomainSection, Failure> {
        self.domain.as_ref().ok_or_else(|| Failure::config("this command needs a [domain] section"))
    }

    pub fn energy(&self) -> Result<&EnergySection, Failure> {
        self.energy.as_ref().ok_or_else(|| Failure::config("this command needs an [energy] section"))
    }

    /// Cell settings with the run seed applied.
    pub fn cell_config(&self) -> CellConfig {
        CellConfig { seed: self.seed, ..self.cell.clone() }
    }
}

/// Set `a.b.c = value`; the value is read as a TOML literal, falling back to a string.
pub fn apply_override(tree: &mut toml::Table, key: &str, value: &str) -> Result<(), Failure> {
    let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::usage(format!("malformed override key `{key}`")));
    }
    let mut table = tree;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Failure::usage(format!("override `{key}`: `{part}` is not a section"))),
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Split `--section.key=value` arguments from the rest of the command line.
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for arg in args {
        if let Some(body) = arg.strip_prefix("--") {
            if let Some((key, value)) = body.split_once('=') {
                if key.contains('.') {
                    overrides.push((key.to_string(), value.to_string()));
                    continue;
                }
            }
        }
        rest.push(arg);
    }
    (rest, overrides)
}
