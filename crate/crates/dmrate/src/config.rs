//! Scan configuration, read from TOML.
//!
//! ```toml
//! mode = ["trusted", "untrusted"]      # or a single string
//!
//! [channel]
//! distances_km = [20, 50, 100]         # or: transmittances = [0.1, 0.01]
//! xi = 0.01                            # number or list
//!
//! [detector]
//! eta_d = 0.719                        # identical arms, or
//! nu_el = 0.01                         # eta1/eta2/nu1/nu2 for unequal arms
//!
//! [protocol]
//! alpha = [0.7, 0.75, 0.8]             # default: 0.5..=0.9 step 0.05
//! delta_a = [0.0]                      # default: [0.0]
//! beta = 0.95
//!
//! [solver]
//! cutoff = 12
//! gap_tol = 1e-6
//! max_iters = 300
//!
//! [output]
//! path = "rates.csv"
//! ```

use std::path::{Path, PathBuf};

use dmrate_core::channel::ChannelModel;
use dmrate_core::detector::{DetectorModel, NoiseMode};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: OneOrMany<String>,
    channel: RawChannel,
    detector: RawDetector,
    #[serde(default)]
    protocol: RawProtocol,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    distances_km: Option<Vec<f64>>,
    transmittances: Option<Vec<f64>>,
    xi: OneOrMany<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetector {
    eta_d: Option<f64>,
    nu_el: Option<f64>,
    eta1: Option<f64>,
    eta2: Option<f64>,
    nu1: Option<f64>,
    nu2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    alpha: Option<Vec<f64>>,
    delta_a: Option<Vec<f64>>,
    beta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    cutoff: Option<usize>,
    gap_tol: Option<f64>,
    max_iters: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: Option<PathBuf>,
}

/// Default amplitude grid: 0.5 to 0.9 in steps of 0.05.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=8).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

pub const DEFAULT_BETA: f64 = 0.95;
pub const DEFAULT_CUTOFF: usize = 12;

/// A validated scan: the grid is `mode x xi x channel x delta_a x alpha`.
#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub modes: Vec<NoiseMode>,
    pub channels: Vec<ChannelModel>,
    pub xis: Vec<f64>,
    pub detector: DetectorModel,
    pub alphas: Vec<f64>,
    pub delta_as: Vec<f64>,
    pub beta: f64,
    pub cutoff: usize,
    pub gap_tol: f64,
    pub max_iters: usize,
    pub output: Option<PathBuf>,
}

impl ScanConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let modes = raw
            .mode
            .into_vec()
            .iter()
            .map(|m| m.parse::<NoiseMode>().map_err(|e| ConfigError::Invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if modes.is_empty() {
            return invalid("mode list is empty");
        }

        let xis = raw.channel.xi.into_vec();
        if xis.is_empty() {
            return invalid("xi list is empty");
        }
        let channels: Vec<ChannelModel> = match (raw.channel.distances_km, raw.channel.transmittances) {
            (Some(_), Some(_)) => return invalid("give either distances_km or transmittances, not both"),
            (None, None) => return invalid("channel needs distances_km or transmittances"),
            (Some(d), None) => d
                .iter()
                .map(|&l| ChannelModel::from_distance(l, 0.0))
                .collect::<Result<_, _>>()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            (None, Some(t)) => t
                .iter()
                .map(|&e| ChannelModel::from_transmittance(e, 0.0))
                .collect::<Result<_, _>>()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        };
        if channels.is_empty() {
            return invalid("channel grid is empty");
        }
        for &xi in &xis {
            ChannelModel::from_transmittance(1.0, xi).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }

        let d = raw.detector;
        let detector = match (d.eta_d, d.nu_el, d.eta1, d.eta2, d.nu1, d.nu2) {
            (Some(eta), Some(nu), None, None, None, None) => DetectorModel::simple(eta, nu),
            (None, None, Some(e1), Some(e2), Some(n1), Some(n2)) => DetectorModel::new(e1, e2, n1, n2),
            _ => return invalid("detector needs either eta_d and nu_el, or all of eta1, eta2, nu1, nu2"),
        }
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let alphas = raw.protocol.alpha.unwrap_or_else(default_alpha_grid);
        if alphas.is_empty() {
            return invalid("alpha grid is empty");
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return invalid(format!("alpha must be positive, got {a}"));
        }
        let delta_as = raw.protocol.delta_a.unwrap_or_else(|| vec![0.0]);
        if delta_as.is_empty() {
            return invalid("delta_a grid is empty");
        }
        if let Some(a) = delta_as.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return invalid(format!("delta_a must be nonnegative, got {a}"));
        }
        let beta = raw.protocol.beta.unwrap_or(DEFAULT_BETA);
        if !(beta > 0.0 && beta <= 1.0) {
            return invalid(format!("beta must lie in (0, 1], got {beta}"));
        }

        let cutoff = raw.solver.cutoff.unwrap_or(DEFAULT_CUTOFF);
        if cutoff < 2 {
            return invalid(format!("cutoff must be at least 2, got {cutoff}"));
        }
        let gap_tol = raw.solver.gap_tol.unwrap_or(1e-6);
        if !(gap_tol > 0.0) {
            return invalid("gap_tol must be positive");
        }
        let max_iters = raw.solver.max_iters.unwrap_or(300);
        if max_iters == 0 {
            return invalid("max_iters must be positive");
        }

        Ok(Self { modes, channels, xis, detector, alphas, delta_as, beta, cutoff, gap_tol, max_iters, output: raw.output.path })
    }

    /// Number of solved grid points.
    pub fn grid_size(&self) -> usize {
        self.modes.len() * self.xis.len() * self.channels.len() * self.delta_as.len() * self.alphas.len()
    }

    /// Number of best-amplitude summary rows.
    pub fn summary_rows(&self) -> usize {
        self.modes.len() * self.xis.len() * self.channels.len() * self.delta_as.len()
    }
}
