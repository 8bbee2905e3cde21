//! Layered configuration: built-in defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Command-line overrides shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML configuration file with [lattice], [noise], [construction],
    /// [simulation] and [output] sections.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Scaling factor of the partition chain.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Number of lattices in the chain.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    /// Legitimate receiver's noise deviation.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub sigma_b: Option<f64>,
    /// Eavesdropper's noise deviation.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub sigma_e: Option<f64>,
    /// Block length exponent, N = 2^n_exp.
    #[arg(long, global = true)]
    pub n_exp: Option<u32>,
    /// Polarization exponent of the threshold 2^(-N^beta).
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Output alphabet budget of quantized channels.
    #[arg(long, global = true)]
    pub mu: Option<usize>,
    /// Chained blocks per level.
    #[arg(long, global = true)]
    pub blocks: Option<usize>,
    /// Monte-Carlo trials.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    lattice: LatticeSection,
    #[serde(default)]
    noise: NoiseSection,
    #[serde(default)]
    construction: ConstructionSection,
    #[serde(default)]
    simulation: SimulationSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeSection {
    alpha: Option<f64>,
    levels: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    sigma_b: Option<f64>,
    sigma_e: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstructionSection {
    n_exp: Option<u32>,
    beta: Option<f64>,
    mu: Option<usize>,
    blocks: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    trials: Option<u64>,
    seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    out: Option<PathBuf>,
}

/// Fully resolved settings, echoed into every output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    pub alpha: f64,
    pub levels: usize,
    pub sigma_b: f64,
    pub sigma_e: f64,
    pub n_exp: u32,
    pub beta: f64,
    pub mu: usize,
    pub blocks: usize,
    pub trials: u64,
    pub seed: u64,
    pub out: PathBuf,
    pub version: &'static str,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            alpha: 2.5,
            levels: 3,
            sigma_b: 1.0,
            sigma_e: 2.0,
            n_exp: 10,
            beta: polar_lattice::construction::DEFAULT_BETA,
            mu: 256,
            blocks: polar_lattice::construction::DEFAULT_BLOCKS,
            trials: 1000,
            seed: 42,
            out: PathBuf::from("."),
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

fn read_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
}

impl Config {
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let file = match &o.config {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        let d = Config::default();
        Ok(Config {
            alpha: o.alpha.or(file.lattice.alpha).unwrap_or(d.alpha),
            levels: o.levels.or(file.lattice.levels).unwrap_or(d.levels),
            sigma_b: o.sigma_b.or(file.noise.sigma_b).unwrap_or(d.sigma_b),
            sigma_e: o.sigma_e.or(file.noise.sigma_e).unwrap_or(d.sigma_e),
            n_exp: o.n_exp.or(file.construction.n_exp).unwrap_or(d.n_exp),
            beta: o.beta.or(file.construction.beta).unwrap_or(d.beta),
            mu: o.mu.or(file.construction.mu).unwrap_or(d.mu),
            blocks: o.blocks.or(file.construction.blocks).unwrap_or(d.blocks),
            trials: o.trials.or(file.simulation.trials).unwrap_or(d.trials),
            seed: o.seed.or(file.simulation.seed).unwrap_or(d.seed),
            out: o.out.clone().or(file.output.out).unwrap_or(d.out),
            version: d.version,
        })
    }

    /// Single-line JSON rendering.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config is always serializable")
    }
}
