//! Experiment configuration: a JSON file and command-line flags, with
//! flags taking precedence.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dtpc::SolverConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Settings shared by every command.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Common {
    pub root_seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub tolerances: Tolerances,
}

/// Solver overrides; absent fields keep the solver defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub kkt_tol: Option<f64>,
    pub ba_gap_tol: Option<f64>,
    pub grid_points: Option<usize>,
    pub verify_points: Option<usize>,
    pub restarts: Option<usize>,
}

impl Tolerances {
    pub fn solver(&self, seed: u64) -> SolverConfig {
        let d = SolverConfig::default();
        SolverConfig {
            kkt_tol: self.kkt_tol.unwrap_or(d.kkt_tol),
            ba_gap_tol: self.ba_gap_tol.unwrap_or(d.ba_gap_tol),
            grid_points: self.grid_points.unwrap_or(d.grid_points),
            verify_points: self.verify_points.unwrap_or(d.verify_points),
            restarts: self.restarts.unwrap_or(d.restarts),
            seed,
            ..d
        }
    }
}

/// Splits a config file into the shared block and the command block.
pub fn load(path: Option<&Path>) -> Result<(Common, Map<String, Value>), CliError> {
    let Some(path) = path else {
        return Ok((Common::default(), Map::new()));
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
    };
    let mut common = Map::new();
    for key in ["root_seed", "output_dir", "tolerances"] {
        if let Some(v) = map.remove(key) {
            common.insert(key.to_string(), v);
        }
    }
    let common = serde_json::from_value(Value::Object(common))
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok((common, map))
}

pub fn parse_block<T: DeserializeOwned>(map: Map<String, Value>) -> Result<T, CliError> {
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

pub fn require<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| {
        CliError::Usage(format!(
            "missing required parameter `{name}` (flag --{} or config key)",
            name.replace('_', "-")
        ))
    })
}

/// Field-wise `flag.or(file)`.
macro_rules! merge_fields {
    ($flags:expr, $file:expr, $($f:ident),+ $(,)?) => {
        Self { $($f: $flags.$f.or($file.$f)),+ }
    };
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityArgs {
    /// Dark current.
    #[arg(long)]
    pub lambda0: Option<f64>,
    /// Peak input.
    #[arg(long)]
    pub pmax: Option<f64>,
    /// Average input limit; defaults to the peak.
    #[arg(long)]
    pub pavg: Option<f64>,
    /// Channel gain.
    #[arg(long)]
    pub gain: Option<f64>,
    /// Lagrangian violation tolerance, bits.
    #[arg(long)]
    pub tol: Option<f64>,
}

impl CapacityArgs {
    pub fn merge(self, file: Self) -> Self {
        merge_fields!(self, file, lambda0, pmax, pavg, gain, tol)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityParams {
    pub lambda0: f64,
    pub pmax: f64,
    pub pavg: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WiretapArgs {
    /// Legitimate receiver's dark current.
    #[arg(long)]
    pub lambda_b: Option<f64>,
    /// Eavesdropper's dark current.
    #[arg(long)]
    pub lambda_e: Option<f64>,
    #[arg(long)]
    pub pmax: Option<f64>,
    #[arg(long)]
    pub pavg: Option<f64>,
}

impl WiretapArgs {
    pub fn merge(self, file: Self) -> Self {
        merge_fields!(self, file, lambda_b, lambda_e, pmax, pavg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WiretapParams {
    pub lambda_b: f64,
    pub lambda_e: f64,
    pub pmax: f64,
    pub pavg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LinkArg {
    Poisson,
    Noiseless,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdsimArgs {
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub pmax: Option<f64>,
    #[arg(long)]
    pub pavg: Option<f64>,
    /// Inner blocklength; the tag adds ceil(sqrt(n)) letters.
    #[arg(long)]
    pub n: Option<usize>,
    /// Prime field size, also the inner codebook size.
    #[arg(long)]
    pub q: Option<u64>,
    /// Polynomial degree of the coloring family.
    #[arg(long)]
    pub d: Option<u64>,
    /// Tag codewords per color.
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub senders: Option<usize>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long, value_enum)]
    pub link: Option<LinkArg>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Slack in the scaling schedule target `C - 2 eps`.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Blocklengths of the scaling schedule, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub scaling_n: Option<Vec<usize>>,
}

impl IdsimArgs {
    pub fn merge(self, file: Self) -> Self {
        merge_fields!(
            self, file, lambda0, pmax, pavg, n, q, d, bins, trials, senders, candidates, link, lambda1, lambda2, eps,
            scaling_n
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdsimParams {
    pub lambda0: f64,
    pub pmax: f64,
    pub pavg: f64,
    pub n: usize,
    pub q: u64,
    pub d: u64,
    pub bins: usize,
    pub trials: u64,
    pub senders: usize,
    pub candidates: usize,
    pub link: LinkArg,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eps: f64,
    pub scaling_n: Vec<usize>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageArgs {
    /// Legitimate receiver's dark current; enables the main-channel comparison.
    #[arg(long)]
    pub lambda_b: Option<f64>,
    #[arg(long)]
    pub lambda_e: Option<f64>,
    #[arg(long)]
    pub pmax: Option<f64>,
    /// Messages in the random ensemble.
    #[arg(long)]
    pub messages: Option<usize>,
    /// Block length.
    #[arg(long)]
    pub n: Option<usize>,
    /// Input sequences per message.
    #[arg(long)]
    pub support: Option<usize>,
    /// Monte-Carlo trials.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Output cap of the quantized model.
    #[arg(long)]
    pub z0: Option<u64>,
    /// Quantizer grid sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub grids: Option<Vec<usize>>,
    /// Random events in the audit.
    #[arg(long)]
    pub events: Option<usize>,
    /// Per-letter peak is `c / n` times the eavesdropper's dark current.
    #[arg(long)]
    pub peak_c: Option<f64>,
}

impl LeakageArgs {
    pub fn merge(self, file: Self) -> Self {
        merge_fields!(self, file, lambda_b, lambda_e, pmax, messages, n, support, trials, z0, grids, events, peak_c)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LeakageParams {
    pub lambda_b: Option<f64>,
    pub lambda_e: f64,
    pub pmax: f64,
    pub messages: usize,
    pub n: usize,
    pub support: usize,
    pub trials: u64,
    pub z0: u64,
    pub grids: Vec<usize>,
    pub events: usize,
    pub peak_c: f64,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConverseArgs {
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub pmax: Option<f64>,
    #[arg(long)]
    pub pavg: Option<f64>,
    /// Blocklengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Threshold above capacity, bits.
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub samples: Option<u64>,
}

impl ConverseArgs {
    pub fn merge(self, file: Self) -> Self {
        merge_fields!(self, file, lambda0, pmax, pavg, n, nu, samples)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConverseParams {
    pub lambda0: f64,
    pub pmax: f64,
    pub pavg: f64,
    pub n: Vec<usize>,
    pub nu: f64,
    pub samples: u64,
}
