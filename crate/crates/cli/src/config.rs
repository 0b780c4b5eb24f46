//! Run configuration: a TOML file, then command-line and environment overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use scrutable_core::corpus::{RecordFormat, SplitRatios};
use scrutable_core::eval::{Gain, ScrutabilityConfig};
use scrutable_core::profilegen::{Domain, ProfileJob, RemoteConfig, REVIEWS_PER_FEATURE};
use scrutable_core::recsys::{KnnParams, MfParams, RegressorParams};

pub const API_KEY_ENV: &str = "PROFILEREC_API_KEY";
pub const ENDPOINT_ENV: &str = "PROFILEREC_ENDPOINT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: Option<PathBuf>,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub profiles: ProfilesConfig,
    pub backend: BackendConfig,
    pub models: ModelsConfig,
    pub evaluation: EvaluationConfig,
    pub scrutability: ScrutinyConfig,
    pub ablation: AblationSettings,
    pub serve: ServeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub records: Option<PathBuf>,
    /// Guessed from the file extension when absent.
    pub format: Option<RecordFormat>,
    pub domain: Domain,
    /// One word per line; the domain defaults apply when absent.
    pub blocklist: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            records: None,
            format: None,
            domain: Domain::Hotels,
            blocklist: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self {
            train: r.train,
            validation: r.validation,
            test: r.test,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train,
            validation: self.validation,
            test: self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilesConfig {
    pub k: usize,
    pub reviews_per_feature: usize,
    pub review_seed: u64,
    pub max_in_flight: usize,
}

impl Default for ProfilesConfig {
    fn default() -> Self {
        Self {
            k: 5,
            reviews_per_feature: REVIEWS_PER_FEATURE,
            review_seed: 0,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Offline,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub remote: RemoteConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub mf: MfParams,
    pub knn: KnnParams,
    pub regressor: RegressorParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub gain: Gain,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScrutinyConfig {
    /// Features to study; the three most common test-item features when empty.
    pub targets: Vec<String>,
    #[serde(flatten)]
    pub study: ScrutabilityConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub k_values: Vec<usize>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            k_values: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub port: u16,
    /// Catalog items added to every user's candidate pool on top of the test items.
    pub extra_candidates: usize,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            extra_candidates: 100,
            static_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.output,
            &mut config.data.records,
            &mut config.data.blocklist,
            &mut config.serve.static_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// Secrets and the endpoint come from the environment when set.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(key) = lookup(API_KEY_ENV).filter(|k| !k.is_empty()) {
            self.backend.remote.api_key = Some(key);
        }
        if let Some(url) = lookup(ENDPOINT_ENV).filter(|u| !u.is_empty()) {
            self.backend.remote.url = url;
        }
    }

    /// One seed for the split, review sampling and every model.
    pub fn apply_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.profiles.review_seed = seed;
        self.models.mf.seed = seed;
        self.models.regressor.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.profiles.k) {
            bail!("profiles.k must be between 1 and 5, got {}", self.profiles.k);
        }
        if let Some(bad) = self.ablation.k_values.iter().find(|k| !(1..=5).contains(*k)) {
            bail!("ablation.k_values must lie in 1..=5, got {bad}");
        }
        self.split.ratios().validate()?;
        for (name, path) in [
            ("data.records", &self.data.records),
            ("data.blocklist", &self.data.blocklist),
            ("serve.static_dir", &self.serve.static_dir),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    bail!("{name} points to {}, which does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn profile_job(&self, k: usize) -> Result<ProfileJob> {
        let blocklist = match &self.data.blocklist {
            Some(path) => scrutable_core::preference::Blocklist::from_file(path)?,
            None => scrutable_core::preference::Blocklist::domain_defaults(),
        };
        Ok(ProfileJob {
            k,
            reviews_per_feature: self.profiles.reviews_per_feature,
            blocklist,
            domain: self.data.domain,
            review_seed: self.profiles.review_seed,
            max_in_flight: self.profiles.max_in_flight,
            ..ProfileJob::default()
        })
    }
}
