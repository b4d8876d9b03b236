//! Experiment configuration.
//!
//! Every field is optional at the parse layer so that [`crate::validate`]
//! can report all missing fields at once instead of stopping at the first.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    SpeedTable,
    SpeedBracket,
    DecayFit,
    TrapProbe,
    ThreatProbe,
    Density,
    Barrier,
    Decoupling,
    SkeletonCheck,
    GammaCheck,
}

impl Kind {
    pub const ALL: [Kind; 10] = [
        Kind::SpeedTable,
        Kind::SpeedBracket,
        Kind::DecayFit,
        Kind::TrapProbe,
        Kind::ThreatProbe,
        Kind::Density,
        Kind::Barrier,
        Kind::Decoupling,
        Kind::SkeletonCheck,
        Kind::GammaCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::SpeedTable => "speed-table",
            Kind::SpeedBracket => "speed-bracket",
            Kind::DecayFit => "decay-fit",
            Kind::TrapProbe => "trap-probe",
            Kind::ThreatProbe => "threat-probe",
            Kind::Density => "density",
            Kind::Barrier => "barrier",
            Kind::Decoupling => "decoupling",
            Kind::SkeletonCheck => "skeleton-check",
            Kind::GammaCheck => "gamma-check",
        }
    }

    pub fn needs_walk(self) -> bool {
        !matches!(self, Kind::Decoupling | Kind::GammaCheck)
    }

    pub fn needs_environment(self) -> bool {
        self != Kind::GammaCheck
    }

    pub fn needs_speeds(self) -> bool {
        matches!(self, Kind::SpeedTable | Kind::SpeedBracket | Kind::DecayFit)
    }

    pub fn needs_traps(self) -> bool {
        matches!(self, Kind::TrapProbe | Kind::ThreatProbe | Kind::Density | Kind::Barrier)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment_cli: CliSection,
    #[serde(default)]
    pub rng_field: RngSection,
    #[serde(default)]
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub walker: WalkerSection,
    #[serde(default)]
    pub geometry_scales: ScalesSection,
    #[serde(default)]
    pub estimators: EstimatorsSection,
    #[serde(default)]
    pub traps: TrapsSection,
    #[serde(default)]
    pub decoupling: DecouplingSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliSection {
    pub kind: Option<Kind>,
    pub replicas: Option<u64>,
    pub out_dir: Option<String>,
    /// `n` values for gamma-check.
    pub n_list: Option<Vec<u64>>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngSection {
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    /// `iid`, `markov` or `renewal`.
    pub model: Option<String>,
    pub probs: Option<Vec<f64>>,
    pub transition: Option<Vec<Vec<f64>>>,
    /// Defaults to the stationary law of `transition`.
    pub initial: Option<Vec<f64>>,
    pub beta: Option<f64>,
    pub cap: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkerSection {
    pub range: Option<i64>,
    pub ell: Option<usize>,
    pub gamma: Option<f64>,
    /// One row over `-R..=R`, shared by every word.
    pub row: Option<Vec<f64>>,
    /// One row per word, words in lexicographic order.
    pub table: Option<Vec<Vec<f64>>>,
    /// Continuous-time horizon for skeleton-check.
    pub horizon: Option<f64>,
    pub start: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesSection {
    pub l0: Option<u64>,
    pub k_max: Option<usize>,
    pub h_list: Option<Vec<u64>>,
    pub k0: Option<usize>,
    pub k1: Option<usize>,
    /// `v - v+` for the summability flag.
    pub speed_margin: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorsSection {
    pub v_grid: Option<Vec<f64>>,
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub v_step: Option<f64>,
    pub threshold: Option<f64>,
    /// Speed whose decay is fitted by decay-fit.
    pub v: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapsSection {
    pub h_k: Option<u64>,
    pub r: Option<u64>,
    pub bold_h: Option<u64>,
    /// Ladder level; when set, `h_k`, `r` and `bold_h` come from the ladder.
    pub k: Option<usize>,
    pub delta: Option<f64>,
    pub v0: Option<f64>,
    pub v_plus: Option<f64>,
    pub anchor_x: Option<f64>,
    pub anchor_n: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecouplingSection {
    pub h_list: Option<Vec<u64>>,
    pub width: Option<i64>,
    pub height: Option<u64>,
    pub state: Option<u8>,
    pub min_fraction: Option<f64>,
    pub alpha: Option<f64>,
    pub c1: Option<f64>,
    pub a: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
