//! Configuration resolution: an optional TOML file merged with command-line
//! overrides, then turned into live backend/oracle/embedder components.
//!
//! Credentials never travel through flags or the config file. HTTP components
//! read the API key from the environment variable named by `credential_env`
//! (default `MALR_API_KEY`) at request time.

use std::fs;
use std::io::{self, BufReader};
use std::path::PathBuf;

use malr_core::{
    Backend, ConsoleOracle, ElementFlaw, Embedder, Error, HttpBackend, HttpBackendConfig,
    HttpEmbedder, HttpOracle, OracleAdapter, PlannerConfig, ReflectorMode, ScriptedBackend,
    ScriptedOracle, TemplateLibrary, TrainerConfig, TrigramEmbedder,
};
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_WORKER_POOL_SIZE: usize = 4;

/// Raw shape of the TOML config file. Every field is optional so a partial
/// file works; unknown keys are rejected to catch typos early.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub zeta: Option<f64>,
    pub max_trials: Option<u32>,
    pub worker_pool_size: Option<usize>,
    pub templates_dir: Option<PathBuf>,
    pub deterministic: Option<bool>,
    pub backend: Option<BackendTable>,
    pub oracle: Option<OracleTable>,
    pub embedder: Option<EmbedderTable>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendTable {
    pub kind: Option<String>,
    pub flaw: Option<String>,
    pub reflector: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub credential_env: Option<String>,
    pub max_attempts: Option<u32>,
    pub backoff_base_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleTable {
    pub kind: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub credential_env: Option<String>,
    pub max_attempts: Option<u32>,
    pub backoff_base_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderTable {
    pub kind: Option<String>,
    pub dim: Option<usize>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub credential_env: Option<String>,
    pub max_attempts: Option<u32>,
    pub backoff_base_ms: Option<u64>,
}

/// Command-line values that override the config file. Populated from the
/// global clap arguments; `None` means "not given, fall through to the file".
#[derive(Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub backend: Option<String>,
    pub flaw: Option<String>,
    pub reflector: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub credential_env: Option<String>,
    pub oracle: Option<String>,
    pub embedder: Option<String>,
    pub templates_dir: Option<PathBuf>,
    pub zeta: Option<f64>,
    pub max_trials: Option<u32>,
    pub workers: Option<usize>,
    pub deterministic: bool,
}

/// Connection settings for one HTTP component.
#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub endpoint: String,
    pub model: Option<String>,
    pub credential_env: Option<String>,
    pub max_attempts: Option<u32>,
    pub backoff_base_ms: Option<u64>,
}

impl HttpSettings {
    fn into_backend_config(self) -> HttpBackendConfig {
        let mut config = HttpBackendConfig::new(self.endpoint);
        let defaults = HttpBackendConfig::new("");
        if let Some(model) = self.model {
            config = config.with_model(model);
        }
        if let Some(var) = self.credential_env {
            config = config.with_credential_env(var);
        }
        if self.max_attempts.is_some() || self.backoff_base_ms.is_some() {
            config = config.with_retry(
                self.max_attempts.unwrap_or(defaults.max_attempts),
                self.backoff_base_ms.unwrap_or(defaults.backoff_base_ms),
            );
        }
        config
    }
}

#[derive(Debug, Clone)]
pub enum BackendSpec {
    ScriptedPerfect { reflector: ReflectorMode },
    ScriptedAffirmative { reflector: ReflectorMode },
    ScriptedFlawed { flaw: ElementFlaw, reflector: ReflectorMode },
    Http(HttpSettings),
}

impl BackendSpec {
    fn is_http(&self) -> bool {
        matches!(self, BackendSpec::Http(_))
    }
}

#[derive(Debug, Clone)]
pub enum OracleSpec {
    Scripted,
    Console,
    Http(HttpSettings),
}

impl OracleSpec {
    fn is_http(&self) -> bool {
        matches!(self, OracleSpec::Http(_))
    }

    pub fn is_console(&self) -> bool {
        matches!(self, OracleSpec::Console)
    }
}

#[derive(Debug, Clone)]
pub enum EmbedderSpec {
    Trigram { dim: usize },
    Http(HttpSettings),
}

impl EmbedderSpec {
    fn is_http(&self) -> bool {
        matches!(self, EmbedderSpec::Http(_))
    }
}

/// Fully resolved settings for one command invocation. The deterministic
/// flag is enforced during resolution (HTTP components are refused) and
/// needs no representation here.
#[derive(Debug)]
pub struct CliConfig {
    pub zeta: f64,
    pub max_trials: u32,
    pub worker_pool_size: usize,
    pub templates_dir: Option<PathBuf>,
    pub backend: BackendSpec,
    pub oracle: OracleSpec,
    pub embedder: EmbedderSpec,
}

impl CliConfig {
    /// Merges flag overrides over the config file over built-in defaults and
    /// validates the combination.
    pub fn resolve(overrides: Overrides) -> Result<Self, CliError> {
        let file = match &overrides.config {
            Some(path) => {
                let raw = fs::read_to_string(path)
                    .map_err(|e| CliError::App(Error::io(path, e)))?;
                toml::from_str::<FileConfig>(&raw).map_err(|e| {
                    CliError::App(Error::Config(format!(
                        "{}: {}",
                        path.display(),
                        e.message()
                    )))
                })?
            }
            None => FileConfig::default(),
        };

        let file_backend = file.backend.unwrap_or_default();
        let file_oracle = file.oracle.unwrap_or_default();
        let file_embedder = file.embedder.unwrap_or_default();

        let backend_kind = overrides
            .backend
            .or(file_backend.kind)
            .unwrap_or_else(|| "scripted-perfect".to_string());
        let reflector = parse_reflector(
            overrides
                .reflector
                .or(file_backend.reflector)
                .as_deref()
                .unwrap_or("accurate"),
        )?;
        let flaw_spec = overrides.flaw.or(file_backend.flaw);
        let backend_http = HttpSettings {
            endpoint: overrides
                .endpoint
                .or(file_backend.endpoint)
                .unwrap_or_default(),
            model: overrides.model.or(file_backend.model),
            credential_env: overrides.credential_env.or(file_backend.credential_env),
            max_attempts: file_backend.max_attempts,
            backoff_base_ms: file_backend.backoff_base_ms,
        };
        let backend = match backend_kind.as_str() {
            "scripted-perfect" => BackendSpec::ScriptedPerfect { reflector },
            "scripted-affirmative" => BackendSpec::ScriptedAffirmative { reflector },
            "scripted-flawed" => {
                let spec = flaw_spec.ok_or_else(|| {
                    CliError::Usage(
                        "backend `scripted-flawed` needs a flaw, e.g. --flaw subject=state_functionary"
                            .to_string(),
                    )
                })?;
                let flaw = ElementFlaw::parse(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
                BackendSpec::ScriptedFlawed { flaw, reflector }
            }
            "http" => {
                if backend_http.endpoint.is_empty() {
                    return Err(CliError::Usage(
                        "backend `http` needs an endpoint (--endpoint or [backend].endpoint)"
                            .to_string(),
                    ));
                }
                BackendSpec::Http(backend_http)
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown backend kind `{other}` (valid: scripted-perfect, \
                     scripted-affirmative, scripted-flawed, http)"
                )));
            }
        };

        let oracle_kind = overrides
            .oracle
            .or(file_oracle.kind)
            .unwrap_or_else(|| "scripted".to_string());
        let oracle = match oracle_kind.as_str() {
            "scripted" => OracleSpec::Scripted,
            "console" => OracleSpec::Console,
            "http" => {
                let endpoint = file_oracle.endpoint.ok_or_else(|| {
                    CliError::Usage(
                        "oracle `http` needs [oracle].endpoint in the config file".to_string(),
                    )
                })?;
                OracleSpec::Http(HttpSettings {
                    endpoint,
                    model: file_oracle.model,
                    credential_env: file_oracle.credential_env,
                    max_attempts: file_oracle.max_attempts,
                    backoff_base_ms: file_oracle.backoff_base_ms,
                })
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown oracle kind `{other}` (valid: scripted, console, http)"
                )));
            }
        };

        let embedder_kind = overrides
            .embedder
            .or(file_embedder.kind)
            .unwrap_or_else(|| "trigram".to_string());
        let embedder = match embedder_kind.as_str() {
            "trigram" => EmbedderSpec::Trigram {
                dim: file_embedder.dim.unwrap_or(TrigramEmbedder::DEFAULT_DIM),
            },
            "http" => {
                let endpoint = file_embedder.endpoint.ok_or_else(|| {
                    CliError::Usage(
                        "embedder `http` needs [embedder].endpoint in the config file".to_string(),
                    )
                })?;
                EmbedderSpec::Http(HttpSettings {
                    endpoint,
                    model: file_embedder.model,
                    credential_env: file_embedder.credential_env,
                    max_attempts: file_embedder.max_attempts,
                    backoff_base_ms: file_embedder.backoff_base_ms,
                })
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown embedder kind `{other}` (valid: trigram, http)"
                )));
            }
        };

        let deterministic =
            overrides.deterministic || file.deterministic.unwrap_or(false);
        if deterministic {
            if backend.is_http() {
                return Err(CliError::Usage(
                    "--deterministic forbids the http backend; use a scripted backend".to_string(),
                ));
            }
            if oracle.is_http() {
                return Err(CliError::Usage(
                    "--deterministic forbids the http oracle; use the scripted oracle".to_string(),
                ));
            }
            if embedder.is_http() {
                return Err(CliError::Usage(
                    "--deterministic forbids the http embedder; use the trigram embedder"
                        .to_string(),
                ));
            }
        }

        Ok(Self {
            zeta: overrides
                .zeta
                .or(file.zeta)
                .unwrap_or(PlannerConfig::DEFAULT_ZETA),
            max_trials: overrides
                .max_trials
                .or(file.max_trials)
                .unwrap_or(TrainerConfig::DEFAULT_MAX_TRIALS),
            worker_pool_size: overrides
                .workers
                .or(file.worker_pool_size)
                .unwrap_or(DEFAULT_WORKER_POOL_SIZE),
            templates_dir: overrides.templates_dir.or(file.templates_dir),
            backend,
            oracle,
            embedder,
        })
    }

    pub fn templates(&self) -> Result<TemplateLibrary, Error> {
        match &self.templates_dir {
            Some(dir) => TemplateLibrary::with_overrides_dir(dir),
            None => Ok(TemplateLibrary::embedded()),
        }
    }

    pub fn build_backend(&self) -> Result<BuiltBackend, Error> {
        Ok(match &self.backend {
            BackendSpec::ScriptedPerfect { reflector } => BuiltBackend::Scripted(
                ScriptedBackend::perfect().with_reflector_mode(*reflector),
            ),
            BackendSpec::ScriptedAffirmative { reflector } => BuiltBackend::Scripted(
                ScriptedBackend::affirmative().with_reflector_mode(*reflector),
            ),
            BackendSpec::ScriptedFlawed { flaw, reflector } => BuiltBackend::Scripted(
                ScriptedBackend::flawed(flaw.clone()).with_reflector_mode(*reflector),
            ),
            BackendSpec::Http(settings) => {
                BuiltBackend::Http(HttpBackend::new(settings.clone().into_backend_config())?)
            }
        })
    }

    pub fn build_oracle(&self) -> Result<BuiltOracle, Error> {
        Ok(match &self.oracle {
            OracleSpec::Scripted => BuiltOracle::Scripted(ScriptedOracle),
            OracleSpec::Console => {
                BuiltOracle::Console(ConsoleOracle::new(BufReader::new(io::stdin())))
            }
            OracleSpec::Http(settings) => {
                BuiltOracle::Http(HttpOracle::new(settings.clone().into_backend_config())?)
            }
        })
    }

    pub fn build_embedder(&self) -> Result<BuiltEmbedder, Error> {
        Ok(match &self.embedder {
            EmbedderSpec::Trigram { dim } => BuiltEmbedder::Trigram(TrigramEmbedder::new(*dim)?),
            EmbedderSpec::Http(settings) => {
                BuiltEmbedder::Http(HttpEmbedder::new(settings.clone().into_backend_config())?)
            }
        })
    }
}

pub enum BuiltBackend {
    Scripted(ScriptedBackend),
    Http(HttpBackend),
}

impl BuiltBackend {
    pub fn as_backend(&self) -> &dyn Backend {
        match self {
            BuiltBackend::Scripted(b) => b,
            BuiltBackend::Http(b) => b,
        }
    }
}

pub enum BuiltOracle {
    Scripted(ScriptedOracle),
    Console(ConsoleOracle<BufReader<io::Stdin>>),
    Http(HttpOracle),
}

impl BuiltOracle {
    pub fn as_adapter(&self) -> &dyn OracleAdapter {
        match self {
            BuiltOracle::Scripted(o) => o,
            BuiltOracle::Console(o) => o,
            BuiltOracle::Http(o) => o,
        }
    }
}

pub enum BuiltEmbedder {
    Trigram(TrigramEmbedder),
    Http(HttpEmbedder),
}

impl BuiltEmbedder {
    pub fn as_embedder(&self) -> &dyn Embedder {
        match self {
            BuiltEmbedder::Trigram(e) => e,
            BuiltEmbedder::Http(e) => e,
        }
    }
}

fn parse_reflector(raw: &str) -> Result<ReflectorMode, CliError> {
    match raw {
        "accurate" => Ok(ReflectorMode::Accurate),
        "wrong-aspect" => Ok(ReflectorMode::WrongAspect),
        other => Err(CliError::Usage(format!(
            "unknown reflector mode `{other}` (valid: accurate, wrong-aspect)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolved(overrides: Overrides) -> CliConfig {
        CliConfig::resolve(overrides).expect("config resolves")
    }

    #[test]
    fn test_defaults_without_file_or_flags() {
        let config = resolved(Overrides::default());
        assert_eq!(config.zeta, 0.8);
        assert_eq!(config.max_trials, 2);
        assert_eq!(config.worker_pool_size, DEFAULT_WORKER_POOL_SIZE);
        assert!(matches!(config.backend, BackendSpec::ScriptedPerfect { .. }));
        assert!(matches!(config.oracle, OracleSpec::Scripted));
        assert!(matches!(config.embedder, EmbedderSpec::Trigram { dim: 256 }));
    }

    #[test]
    fn test_flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("malr.toml");
        std::fs::write(
            &path,
            "zeta = 0.5\nmax_trials = 7\n[backend]\nkind = \"scripted-affirmative\"\n",
        )
        .unwrap();
        let config = resolved(Overrides {
            config: Some(path),
            zeta: Some(0.9),
            backend: Some("scripted-flawed".to_string()),
            flaw: Some("subject=state_functionary".to_string()),
            ..Overrides::default()
        });
        assert_eq!(config.zeta, 0.9);
        assert_eq!(config.max_trials, 7);
        assert!(matches!(config.backend, BackendSpec::ScriptedFlawed { .. }));
    }

    #[test]
    fn test_unknown_kind_is_a_usage_error() {
        let err = CliConfig::resolve(Overrides {
            backend: Some("gpt".to_string()),
            ..Overrides::default()
        })
        .unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));

        let err = CliConfig::resolve(Overrides {
            oracle: Some("human".to_string()),
            ..Overrides::default()
        })
        .unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn test_flawed_backend_requires_a_flaw() {
        let err = CliConfig::resolve(Overrides {
            backend: Some("scripted-flawed".to_string()),
            ..Overrides::default()
        })
        .unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn test_http_backend_requires_an_endpoint() {
        let err = CliConfig::resolve(Overrides {
            backend: Some("http".to_string()),
            ..Overrides::default()
        })
        .unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn test_deterministic_refuses_http_components() {
        let err = CliConfig::resolve(Overrides {
            backend: Some("http".to_string()),
            endpoint: Some("http://localhost:1/v1".to_string()),
            deterministic: true,
            ..Overrides::default()
        })
        .unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("malr.toml");
        std::fs::write(
            &path,
            "deterministic = true\n[oracle]\nkind = \"http\"\nendpoint = \"http://localhost:1\"\n",
        )
        .unwrap();
        let err = CliConfig::resolve(Overrides {
            config: Some(path),
            ..Overrides::default()
        })
        .unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn test_missing_config_file_is_a_data_error() {
        let err = CliConfig::resolve(Overrides {
            config: Some(PathBuf::from("/nonexistent/malr.toml")),
            ..Overrides::default()
        })
        .unwrap_err();
        assert!(matches!(err, CliError::App(Error::Io { .. })));
    }

    #[test]
    fn test_unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("malr.toml");
        std::fs::write(&path, "zeta = 0.8\nbanana = true\n").unwrap();
        let err = CliConfig::resolve(Overrides {
            config: Some(path),
            ..Overrides::default()
        })
        .unwrap_err();
        assert!(matches!(err, CliError::App(Error::Config(_))));
    }
}
