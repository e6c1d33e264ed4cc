use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use serde::Deserialize;
use serde_json::{Map, Value};

use cotkt_core::backend::{
    Client, HttpConfig, HttpTransport, ReplayTransport, ReplyCache, RetryPolicy, Transport,
};
use cotkt_core::calibration::MetricOptions;
use cotkt_core::dataset::DatasetSpec;
use cotkt_core::io::sha256_hex;
use cotkt_core::prompting::TemplateSet;
use cotkt_core::GenerationParams;

use crate::UsageError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
    /// Backend used by `harvest` when `--teacher` is absent.
    #[serde(default)]
    pub teacher: Option<String>,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub harvest: HarvestConfig,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    /// Overrides for the training manifest.
    #[serde(default)]
    pub training: Map<String, Value>,
    #[serde(default)]
    pub sweep_sizes: Option<Vec<usize>>,
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
}

fn default_concurrency() -> usize {
    4
}

fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvestConfig {
    #[serde(default)]
    pub samples_per_item: Option<u32>,
    #[serde(default)]
    pub retry_incorrect: u32,
    /// Seeded subsample size; all items when absent.
    #[serde(default)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Http {
        model: String,
        base_url: String,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        supports_top_k: bool,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        retry: Option<RetryPolicy>,
        #[serde(default)]
        max_in_flight: Option<usize>,
    },
    Replay {
        model: String,
        fixture: PathBuf,
    },
}

fn default_timeout() -> u64 {
    120
}

impl BackendConfig {
    pub fn model(&self) -> &str {
        match self {
            BackendConfig::Http { model, .. } | BackendConfig::Replay { model, .. } => model,
        }
    }
}

/// A parsed config plus the bytes it was read from.
pub struct Loaded {
    pub config: Config,
    raw: Vec<u8>,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Loaded> {
        let raw = std::fs::read(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: Config = serde_json::from_slice(&raw)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.resolve_paths(&base);
        config
            .generation
            .validate()
            .map_err(|e| UsageError(format!("generation: {e}")))?;
        Ok(Loaded { config, raw })
    }

    /// Identifies the config bytes together with the effective seed.
    pub fn hash(&self) -> String {
        let mut bytes = self.raw.clone();
        bytes.extend_from_slice(format!("\nseed={}", self.config.seed).as_bytes());
        sha256_hex(&bytes)
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    fn resolve_paths(&mut self, base: &Path) {
        for d in &mut self.datasets {
            rebase(base, &mut d.path);
        }
        for b in self.backends.values_mut() {
            if let BackendConfig::Replay { fixture, .. } = b {
                rebase(base, fixture);
            }
        }
        if let Some(t) = &mut self.templates_dir {
            rebase(base, t);
        }
        rebase(base, &mut self.runs_dir);
    }

    pub fn dataset(&self, name: Option<&str>) -> Result<&DatasetSpec> {
        match name {
            Some(n) => self
                .datasets
                .iter()
                .find(|d| d.name == n)
                .ok_or_else(|| UsageError(format!("no dataset named {n:?} in config")).into()),
            None if self.datasets.len() == 1 => Ok(&self.datasets[0]),
            None => Err(UsageError(
                "--dataset is required when the config lists several datasets".into(),
            )
            .into()),
        }
    }

    pub fn backend(&self, name: &str) -> Result<&BackendConfig> {
        self.backends
            .get(name)
            .ok_or_else(|| UsageError(format!("no backend named {name:?} in config")).into())
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.templates_dir {
            Some(dir) => {
                TemplateSet::from_dir(dir).map_err(|e| UsageError(format!("templates: {e}")).into())
            }
            None => Ok(TemplateSet::builtin()),
        }
    }
}

/// Builds a client for `backend` that caches replies in `cache_path`.
pub fn build_client(
    backend: &BackendConfig,
    cache_path: &Path,
    max_concurrency: usize,
) -> Result<Client> {
    let (transport, retry, in_flight): (Box<dyn Transport>, Option<RetryPolicy>, Option<usize>) =
        match backend {
            BackendConfig::Replay { fixture, .. } => {
                let replay = ReplayTransport::load(fixture).map_err(|e| {
                    UsageError(format!("replay fixture {}: {e}", fixture.display()))
                })?;
                (Box::new(replay), None, None)
            }
            BackendConfig::Http {
                base_url,
                api_key_env,
                supports_top_k,
                timeout_secs,
                retry,
                max_in_flight,
                ..
            } => {
                let api_key = match api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        UsageError(format!("environment variable {var} is not set"))
                    })?),
                    None => None,
                };
                let http = HttpTransport::new(HttpConfig {
                    base_url: base_url.clone(),
                    api_key,
                    supports_top_k: *supports_top_k,
                    timeout: Duration::from_secs(*timeout_secs),
                })
                .map_err(|e| anyhow!("cannot build HTTP client: {e}"))?;
                (Box::new(http), *retry, *max_in_flight)
            }
        };
    let cache = ReplyCache::open(cache_path)
        .with_context(|| format!("opening cache {}", cache_path.display()))?;
    let mut client = Client::new(transport)
        .with_cache(cache)
        .with_max_in_flight(in_flight.unwrap_or(max_concurrency));
    if let Some(r) = retry {
        client = client.with_retry(r);
    }
    Ok(client)
}
