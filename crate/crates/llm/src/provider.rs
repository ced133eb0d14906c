use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cassette::{Cassette, CassetteMode};
use crate::mock::{NoisyMock, PerfectMock};
use crate::remote::{RemoteConfig, RemoteProvider};
use crate::request::{CompletionRequest, CompletionResult};
use crate::LlmError;

/// A language-model backend. Implementations are safe to call concurrently.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError>;

    fn name(&self) -> &str;
}

/// Provider selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProviderConfig {
    RemoteHttp(RemoteConfig),
    PerfectMock,
    NoisyMock {
        error_rate: f64,
        #[serde(default)]
        seed: u64,
    },
    Cassette {
        path: PathBuf,
        #[serde(default)]
        mode: CassetteMode,
        /// Provider consulted when recording.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inner: Option<Box<ProviderConfig>>,
    },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::PerfectMock
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        match self {
            ProviderConfig::NoisyMock { error_rate, .. } if !(0.0..=1.0).contains(error_rate) => Err(
                LlmError::Config(format!("error_rate {error_rate} is outside [0, 1]")),
            ),
            ProviderConfig::Cassette {
                mode: CassetteMode::Record,
                inner: None,
                ..
            } => Err(LlmError::Config(
                "cassette recording needs an inner provider".into(),
            )),
            ProviderConfig::Cassette { inner: Some(inner), .. } => inner.validate(),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Provider>, LlmError> {
        self.validate()?;
        Ok(match self {
            ProviderConfig::RemoteHttp(cfg) => Arc::new(RemoteProvider::from_config(cfg)?),
            ProviderConfig::PerfectMock => Arc::new(PerfectMock::new()),
            ProviderConfig::NoisyMock { error_rate, seed } => Arc::new(NoisyMock::new(*error_rate, *seed)),
            ProviderConfig::Cassette { path, mode, inner } => {
                let inner = inner.as_ref().map(|c| c.build()).transpose()?;
                Arc::new(Cassette::open(path, *mode, inner)?)
            }
        })
    }

    /// Short form for command lines: `perfect-mock`, `noisy-mock:<rate>[:<seed>]`,
    /// `remote-http`, `cassette:<path>` (replay) or `record:<path>` (records
    /// remote-http calls).
    pub fn parse_short(text: &str) -> Result<ProviderConfig, LlmError> {
        let mut parts = text.splitn(2, ':');
        let kind = parts.next().unwrap_or_default();
        let rest = parts.next();
        let cfg = match (kind, rest) {
            ("perfect-mock", None) => ProviderConfig::PerfectMock,
            ("noisy-mock", Some(args)) => {
                let mut it = args.split(':');
                let error_rate = it
                    .next()
                    .and_then(|r| r.parse().ok())
                    .ok_or_else(|| LlmError::Config(format!("bad noisy-mock rate in `{text}`")))?;
                let seed = match it.next() {
                    Some(s) => s
                        .parse()
                        .map_err(|_| LlmError::Config(format!("bad noisy-mock seed in `{text}`")))?,
                    None => 0,
                };
                ProviderConfig::NoisyMock { error_rate, seed }
            }
            ("remote-http", None) => ProviderConfig::RemoteHttp(RemoteConfig::default()),
            ("cassette", Some(path)) => ProviderConfig::Cassette {
                path: path.into(),
                mode: CassetteMode::Replay,
                inner: None,
            },
            ("record", Some(path)) => ProviderConfig::Cassette {
                path: path.into(),
                mode: CassetteMode::Record,
                inner: Some(Box::new(ProviderConfig::RemoteHttp(RemoteConfig::default()))),
            },
            _ => return Err(LlmError::Config(format!("unknown provider `{text}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Accumulated call counts and token totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.calls += rhs.calls;
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

#[derive(Debug, Default)]
struct Meter {
    calls: AtomicU64,
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
}

/// Provider handle with usage metering. Clones share the meter; [`fork`]
/// gives a fresh one over the same provider.
///
/// [`fork`]: Gateway::fork
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn Provider>,
    meter: Arc<Meter>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Gateway {
            provider,
            meter: Arc::default(),
        }
    }

    pub fn from_config(config: &ProviderConfig) -> Result<Self, LlmError> {
        Ok(Gateway::new(config.build()?))
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        request.validate()?;
        let result = self.provider.complete(request)?;
        self.meter.calls.fetch_add(1, Ordering::Relaxed);
        self.meter
            .input_tokens
            .fetch_add(result.input_tokens, Ordering::Relaxed);
        self.meter
            .output_tokens
            .fetch_add(result.output_tokens, Ordering::Relaxed);
        Ok(result)
    }

    pub fn usage(&self) -> Usage {
        Usage {
            calls: self.meter.calls.load(Ordering::Relaxed),
            input_tokens: self.meter.input_tokens.load(Ordering::Relaxed),
            output_tokens: self.meter.output_tokens.load(Ordering::Relaxed),
        }
    }

    pub fn fork(&self) -> Gateway {
        Gateway::new(Arc::clone(&self.provider))
    }
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.name())
            .field("usage", &self.usage())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::ScriptedProvider;
    use crate::request::Stage;

    fn req() -> CompletionRequest {
        CompletionRequest {
            stage: Stage::Summarize,
            template_version: 1,
            system_text: String::new(),
            user_text: "hello".into(),
            temperature: 0.0,
            max_output_tokens: 10,
            seed: None,
        }
    }

    #[test]
    fn usage_is_metered_and_forked() {
        let gw = Gateway::new(Arc::new(ScriptedProvider::new(["abcd", "abcdefgh"])));
        gw.complete(&req()).unwrap();
        let fork = gw.fork();
        fork.complete(&req()).unwrap();
        assert_eq!(gw.usage(), Usage { calls: 1, input_tokens: 2, output_tokens: 1 });
        assert_eq!(fork.usage(), Usage { calls: 1, input_tokens: 2, output_tokens: 2 });
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ProviderConfig::NoisyMock { error_rate: 0.2, seed: 7 };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(text, r#"{"kind":"noisy-mock","error_rate":0.2,"seed":7}"#);
        assert_eq!(serde_json::from_str::<ProviderConfig>(&text).unwrap(), cfg);
        let perfect: ProviderConfig = serde_json::from_str(r#"{"kind":"perfect-mock"}"#).unwrap();
        assert_eq!(perfect, ProviderConfig::PerfectMock);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ProviderConfig::NoisyMock { error_rate: 1.5, seed: 0 }.build().is_err());
        assert!(ProviderConfig::parse_short("noisy-mock:x").is_err());
        assert!(ProviderConfig::parse_short("oracle").is_err());
        assert_eq!(
            ProviderConfig::parse_short("noisy-mock:0.2:9").unwrap(),
            ProviderConfig::NoisyMock { error_rate: 0.2, seed: 9 }
        );
    }
}
