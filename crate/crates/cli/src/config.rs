//! Run configuration: TOML file plus command-line overrides.

use serde::{Deserialize, Serialize};

use iwlab_core::scenarios::{registry, Scenario};
use iwlab_core::{Error, Result};

pub const IDENTITY_NAMES: [&str; 5] = ["fubini", "real-iw", "weak-iw", "mollified", "diagnostics"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Identity {
    Fubini,
    RealIw,
    WeakIw,
    Mollified,
    Diagnostics,
}

impl Identity {
    pub fn name(&self) -> &'static str {
        match self {
            Identity::Fubini => "fubini",
            Identity::RealIw => "real-iw",
            Identity::WeakIw => "weak-iw",
            Identity::Mollified => "mollified",
            Identity::Diagnostics => "diagnostics",
        }
    }

    fn parse(name: &str) -> Result<Identity> {
        match name {
            "fubini" => Ok(Identity::Fubini),
            "real-iw" => Ok(Identity::RealIw),
            "weak-iw" => Ok(Identity::WeakIw),
            "mollified" => Ok(Identity::Mollified),
            "diagnostics" => Ok(Identity::Diagnostics),
            other => Err(Error::InvalidArgument(format!(
                "unknown identity {other:?}; valid: {}, all",
                IDENTITY_NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    /// Number of test functions in the panel; the first is the default
    /// centered bump used for the adjudicated residual curves.
    #[serde(default = "default_panel_count")]
    pub count: usize,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            count: default_panel_count(),
        }
    }
}

fn default_panel_count() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative bound for the discrete Fubini discrepancy.
    #[serde(default = "default_fubini_rel")]
    pub fubini_rel: f64,
    /// Bound for the l2 truncation tails.
    #[serde(default = "default_tail_threshold")]
    pub tail_threshold: f64,
    /// Slack below the target Holder exponent.
    #[serde(default = "default_holder_margin")]
    pub holder_margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            fubini_rel: default_fubini_rel(),
            tail_threshold: default_tail_threshold(),
            holder_margin: default_holder_margin(),
        }
    }
}

fn default_fubini_rel() -> f64 {
    1e-9
}

fn default_tail_threshold() -> f64 {
    1e-6
}

fn default_holder_margin() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Scenario names, or ["all"].
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<String>,
    /// Identity names, or ["all"]. The default suite runs fubini,
    /// real-iw and weak-iw.
    #[serde(default = "default_identities")]
    pub identities: Vec<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_base_level")]
    pub base_level: u32,
    #[serde(default = "default_level_count")]
    pub level_count: u32,
    /// Replicates for the residual curves.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Replicate banks for the Fubini exactness check.
    #[serde(default = "default_fubini_replicates")]
    pub fubini_replicates: usize,
    /// Replicates for the Doob bound check.
    #[serde(default = "default_doob_replicates")]
    pub doob_replicates: usize,
    #[serde(default)]
    pub panel: PanelConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_scenarios() -> Vec<String> {
    vec!["all".into()]
}

fn default_identities() -> Vec<String> {
    vec!["fubini".into(), "real-iw".into(), "weak-iw".into()]
}

fn default_seed() -> u64 {
    42
}

fn default_base_level() -> u32 {
    6
}

fn default_level_count() -> u32 {
    5
}

fn default_replicates() -> usize {
    200
}

fn default_fubini_replicates() -> usize {
    100
}

fn default_doob_replicates() -> usize {
    10_000
}

fn default_output_dir() -> String {
    "out".into()
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config populates defaults")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config parse: {e}")))
    }

    /// Resolve names against the registry and validate numeric fields.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let all = registry()?;
        let scenarios: Vec<Scenario> = if self.scenarios.iter().any(|s| s == "all") {
            all
        } else {
            let mut picked = Vec::new();
            for name in &self.scenarios {
                match all.iter().find(|sc| sc.name == name) {
                    Some(sc) => picked.push(sc.clone()),
                    None => {
                        let valid: Vec<&str> = all.iter().map(|sc| sc.name).collect();
                        return Err(Error::InvalidArgument(format!(
                            "unknown scenario {name:?}; valid: {}, all",
                            valid.join(", ")
                        )));
                    }
                }
            }
            picked
        };
        let identities: Vec<Identity> = if self.identities.iter().any(|s| s == "all") {
            vec![
                Identity::Fubini,
                Identity::RealIw,
                Identity::WeakIw,
                Identity::Mollified,
                Identity::Diagnostics,
            ]
        } else {
            self.identities
                .iter()
                .map(|n| Identity::parse(n))
                .collect::<Result<Vec<_>>>()?
        };
        if identities.is_empty() || scenarios.is_empty() {
            return Err(Error::InvalidArgument(
                "need at least one scenario and one identity".into(),
            ));
        }
        if self.level_count == 0 {
            return Err(Error::InvalidArgument("level_count must be positive".into()));
        }
        if self.replicates == 0 || self.fubini_replicates == 0 {
            return Err(Error::InvalidArgument("replicate counts must be positive".into()));
        }
        if self.panel.count == 0 {
            return Err(Error::InvalidArgument("panel count must be positive".into()));
        }
        Ok(ResolvedConfig {
            config: self.clone(),
            scenarios,
            identities,
        })
    }
}

pub struct ResolvedConfig {
    pub config: RunConfig,
    pub scenarios: Vec<Scenario>,
    pub identities: Vec<Identity>,
}

impl std::fmt::Debug for ResolvedConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResolvedConfig")
            .field("scenarios", &self.scenarios.iter().map(|s| s.name).collect::<Vec<_>>())
            .field("identities", &self.identities)
            .finish()
    }
}
