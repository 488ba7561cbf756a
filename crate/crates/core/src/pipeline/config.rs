//! Run configuration, read from a flat TOML file.
//!
//! ```toml
//! run_id = "fixture-onestage"
//! mode = "onestage"
//! ablation = ["no_reflections"]
//! backend_name = "fixture"
//! backend_kind = "fixture"
//! backend_fixture = "backend_fixture.json"
//! provider_name = "mock-64"
//! provider_kind = "mock"
//! provider_dim = 64
//! gallery_store_path = "gallery"
//! manifest_path = "manifest.jsonl"
//! image_dir = "images"
//! cache_dir = "cache"
//! k_list = [1, 5, 10]
//! parallelism = 4
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::gateway::{GenerationConfig, MAX_RETRY_LIMIT};
use crate::CirError;

pub const MAX_PARALLELISM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Onestage,
    Twostage,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Onestage => "onestage",
            Mode::Twostage => "twostage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoOriginalDescription,
    NoThoughts,
    NoReflections,
    NoIcl,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::NoOriginalDescription => "no_original_description",
            Ablation::NoThoughts => "no_thoughts",
            Ablation::NoReflections => "no_reflections",
            Ablation::NoIcl => "no_icl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailPolicy {
    #[default]
    Abort,
    ScoreMiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Fixture,
    OpenaiChat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

fn default_parallelism() -> usize {
    4
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_max_output_tokens() -> u32 {
    1024
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_retry_limit() -> u32 {
    2
}

fn default_max_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub ablation: BTreeSet<Ablation>,
    pub backend_name: String,
    pub provider_name: String,
    pub gallery_store_path: PathBuf,
    #[serde(default)]
    pub manifest_path: Option<PathBuf>,
    #[serde(default)]
    pub k_list: Option<Vec<usize>>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub fail_policy: FailPolicy,
    /// Reference images, looked up by file stem.
    #[serde(default)]
    pub image_dir: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,

    #[serde(default)]
    pub template_path: Option<PathBuf>,
    #[serde(default)]
    pub icl_path: Option<PathBuf>,
    #[serde(default)]
    pub caption_prompt_path: Option<PathBuf>,
    #[serde(default)]
    pub modify_prompt_path: Option<PathBuf>,

    #[serde(default)]
    pub backend_kind: BackendKind,
    #[serde(default)]
    pub backend_fixture: Option<PathBuf>,
    #[serde(default)]
    pub backend_endpoint: Option<String>,
    #[serde(default)]
    pub backend_model: Option<String>,
    #[serde(default)]
    pub backend_api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,

    #[serde(default)]
    pub provider_kind: ProviderKind,
    #[serde(default)]
    pub provider_dim: Option<usize>,
    #[serde(default)]
    pub provider_endpoint: Option<String>,
    #[serde(default)]
    pub provider_model: Option<String>,
    #[serde(default)]
    pub provider_api_key_env: Option<String>,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CirError> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| CirError::Config(e.to_string()))?;
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CirError> {
        let text = std::fs::read_to_string(path).map_err(|e| CirError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.gallery_store_path);
        join(&mut self.output_dir);
        for p in [
            &mut self.manifest_path,
            &mut self.cache_dir,
            &mut self.image_dir,
            &mut self.template_path,
            &mut self.icl_path,
            &mut self.caption_prompt_path,
            &mut self.modify_prompt_path,
            &mut self.backend_fixture,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }

    pub fn validate(&self) -> Result<(), CirError> {
        let bad = |m: String| Err(CirError::Config(m));
        let id_ok = |s: &str| {
            !s.is_empty()
                && s.chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
                && s != "."
                && s != ".."
        };
        if !id_ok(&self.run_id) {
            return bad(format!("run_id `{}` must be a plain identifier", self.run_id));
        }
        if self.backend_name.trim().is_empty() || self.provider_name.trim().is_empty() {
            return bad("backend_name and provider_name must be set".into());
        }
        if self.mode == Mode::Twostage && !self.ablation.is_empty() {
            return bad("ablation must be empty in twostage mode".into());
        }
        if self.parallelism == 0 || self.parallelism > MAX_PARALLELISM {
            return bad(format!(
                "parallelism must be between 1 and {MAX_PARALLELISM}, got {}",
                self.parallelism
            ));
        }
        if let Some(ks) = &self.k_list {
            if ks.is_empty() || ks.contains(&0) {
                return bad("k_list entries must be positive".into());
            }
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout_secs must be positive".into());
        }
        if self.retry_limit > MAX_RETRY_LIMIT {
            return bad(format!("retry_limit must be at most {MAX_RETRY_LIMIT}"));
        }
        match self.backend_kind {
            BackendKind::Fixture if self.backend_fixture.is_none() => {
                return bad("backend_kind fixture needs backend_fixture".into())
            }
            BackendKind::OpenaiChat
                if self.backend_endpoint.is_none()
                    || self.backend_model.is_none()
                    || self.backend_api_key_env.is_none() =>
            {
                return bad(
                    "backend_kind openai_chat needs backend_endpoint, backend_model and backend_api_key_env"
                        .into(),
                )
            }
            _ => {}
        }
        match self.provider_kind {
            ProviderKind::Mock if self.provider_dim.is_none() => {
                return bad("provider_kind mock needs provider_dim".into())
            }
            ProviderKind::Http
                if self.provider_endpoint.is_none()
                    || self.provider_model.is_none()
                    || self.provider_dim.is_none()
                    || self.provider_api_key_env.is_none() =>
            {
                return bad(
                    "provider_kind http needs provider_endpoint, provider_model, provider_dim and provider_api_key_env"
                        .into(),
                )
            }
            _ => {}
        }
        if self.provider_dim == Some(0) {
            return bad("provider_dim must be positive".into());
        }
        Ok(())
    }

    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            backend_name: self.backend_name.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            timeout: Duration::from_secs_f64(self.timeout_secs),
            retry_limit: self.retry_limit,
            max_in_flight: self.max_in_flight,
            ..GenerationConfig::default()
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
run_id = "r1"
backend_name = "fixture"
backend_fixture = "fx.json"
provider_name = "mock"
provider_dim = 8
gallery_store_path = "gallery"
manifest_path = "/abs/manifest.jsonl"
"#;

    #[test]
    fn parses_with_defaults_and_resolves_paths() {
        let c = RunConfig::parse(BASE, Path::new("/cfg")).unwrap();
        assert_eq!(c.mode, Mode::Onestage);
        assert_eq!(c.parallelism, 4);
        assert_eq!(c.fail_policy, FailPolicy::Abort);
        assert_eq!(c.gallery_store_path, Path::new("/cfg/gallery"));
        assert_eq!(c.manifest_path.as_deref(), Some(Path::new("/abs/manifest.jsonl")));
        assert_eq!(c.backend_fixture.as_deref(), Some(Path::new("/cfg/fx.json")));
        assert_eq!(c.run_dir(), Path::new("/cfg/runs/r1"));
        assert_eq!(c.generation_config().temperature, 0.0);
    }

    #[test]
    fn ablations_parse() {
        let text = format!("{BASE}ablation = [\"no_thoughts\", \"no_icl\"]\n");
        let c = RunConfig::parse(&text, Path::new(".")).unwrap();
        assert!(c.ablation.contains(&Ablation::NoThoughts));
        assert!(c.ablation.contains(&Ablation::NoIcl));
    }

    #[test]
    fn invariants() {
        let twostage = format!("{BASE}mode = \"twostage\"\nablation = [\"no_icl\"]\n");
        assert!(RunConfig::parse(&twostage, Path::new(".")).is_err());
        let wide = format!("{BASE}parallelism = 65\n");
        assert!(RunConfig::parse(&wide, Path::new(".")).is_err());
        let zero_k = format!("{BASE}k_list = [0]\n");
        assert!(RunConfig::parse(&zero_k, Path::new(".")).is_err());
        let unknown = format!("{BASE}colour = \"red\"\n");
        assert!(RunConfig::parse(&unknown, Path::new(".")).is_err());
        let bad_id = BASE.replace("\"r1\"", "\"../x\"");
        assert!(RunConfig::parse(&bad_id, Path::new(".")).is_err());
    }

    #[test]
    fn adapter_settings_are_required() {
        let text = BASE.replace("backend_fixture = \"fx.json\"\n", "");
        assert!(RunConfig::parse(&text, Path::new(".")).is_err());
        let http = format!("{BASE}backend_kind = \"openai_chat\"\n");
        assert!(RunConfig::parse(&http, Path::new(".")).is_err());
    }
}
