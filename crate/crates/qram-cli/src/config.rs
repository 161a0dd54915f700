//! Run configuration: JSON config files with command-line flag overrides.
//!
//! Seeds are mandatory inside config files so published numbers stay
//! reproducible; in ad-hoc flag mode a missing seed is generated from
//! entropy and echoed in the output.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use qram_core::{CoreError, NoiseEligibility, NoiseScope, NoiseSpec, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelSelect {
    Depolarizing,
    Damping,
    Heating,
    QubitDepolarizing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeSelect {
    AddressOnly,
    AllQudits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MetricSelect {
    Bus,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EligibilitySelect {
    Gates,
    AllQudits,
}

/// On-disk run configuration (all fields optional; flags override).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<u8>,
    pub k: Option<u8>,
    pub channel: Option<ChannelSelect>,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub input: Option<String>,
    pub table: Option<PathBuf>,
    pub metric: Option<MetricSelect>,
    pub scope: Option<ScopeSelect>,
    pub eligibility: Option<EligibilitySelect>,
    pub workers: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: FileConfig = serde_json::from_str(&text)
            .map_err(|e| CoreError::config(format!("{}: {e}", path.display())))?;
        if cfg.seed.is_none() {
            return Err(CoreError::config(format!(
                "{}: config files must pin a seed",
                path.display()
            )));
        }
        Ok(cfg)
    }
}

/// Build the engine noise specification from the channel selection.
pub fn noise_spec(
    channel: ChannelSelect,
    epsilon: f64,
    gamma: Option<f64>,
    scope: ScopeSelect,
    eligibility: EligibilitySelect,
) -> Result<NoiseSpec> {
    let scope = match (channel, scope) {
        (ChannelSelect::QubitDepolarizing, _) => NoiseScope::DataOnly,
        (_, ScopeSelect::AddressOnly) => NoiseScope::AddressOnly,
        (_, ScopeSelect::AllQudits) => NoiseScope::AllQudits,
    };
    let eligibility = match eligibility {
        EligibilitySelect::Gates => NoiseEligibility::GateAttached,
        EligibilitySelect::AllQudits => NoiseEligibility::AllQuditsAllTimesteps,
    };
    let mut spec = NoiseSpec { depolarizing: 0.0, damping: 0.0, heating: 0.0, scope, eligibility };
    match channel {
        ChannelSelect::Depolarizing | ChannelSelect::QubitDepolarizing => {
            spec.depolarizing = epsilon;
        }
        ChannelSelect::Heating => spec.heating = epsilon,
        ChannelSelect::Damping => {
            spec.damping = gamma.ok_or_else(|| {
                CoreError::config("the damping channel needs --gamma".to_string())
            })?;
        }
    }
    if let Some(g) = gamma {
        if channel != ChannelSelect::Damping {
            spec.damping = g;
        }
    }
    Ok(spec)
}

/// Parse `uniform`, `uniform:COUNT`, `haar:COUNT`, or `amps:FILE`.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSelect {
    Uniform { count: Option<u64> },
    Haar { count: u64 },
    Amplitudes { path: PathBuf },
}

pub fn parse_input(text: &str) -> Result<InputSelect> {
    if text == "uniform" {
        return Ok(InputSelect::Uniform { count: None });
    }
    if let Some(rest) = text.strip_prefix("uniform:") {
        let count = rest
            .parse()
            .map_err(|_| CoreError::config(format!("bad uniform count `{rest}`")))?;
        return Ok(InputSelect::Uniform { count: Some(count) });
    }
    if let Some(rest) = text.strip_prefix("haar:") {
        let count = rest
            .parse()
            .map_err(|_| CoreError::config(format!("bad haar count `{rest}`")))?;
        return Ok(InputSelect::Haar { count });
    }
    if let Some(rest) = text.strip_prefix("amps:") {
        return Ok(InputSelect::Amplitudes { path: PathBuf::from(rest) });
    }
    Err(CoreError::config(format!(
        "unrecognized input spec `{text}` (uniform | uniform:N | haar:N | amps:FILE)"
    )))
}

/// Parse `6..18` (inclusive) or a comma list into a sorted vector.
pub fn parse_n_range(text: &str) -> Result<Vec<u8>> {
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u8 = lo
            .parse()
            .map_err(|_| CoreError::config(format!("bad range start `{lo}`")))?;
        let hi: u8 = hi
            .parse()
            .map_err(|_| CoreError::config(format!("bad range end `{hi}`")))?;
        if lo > hi {
            return Err(CoreError::config(format!("empty range `{text}`")));
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CoreError::config(format!("bad n `{p}`")))
        })
        .collect()
}

pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CoreError::config(format!("bad number `{p}`")))
        })
        .collect()
}

pub fn parse_u8_list(text: &str) -> Result<Vec<u8>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CoreError::config(format!("bad level `{p}`")))
        })
        .collect()
}
