//! Language-model access for the analysis pipeline.
//!
//! Prompts are assembled from versioned templates ([`prompt`]), sent through
//! a metered [`Gateway`] to a [`Provider`]: deterministic mocks, a JSON-lines
//! [`Cassette`], or a chat-completion HTTP endpoint.

pub mod cassette;
pub mod mock;
pub mod prompt;
pub mod provider;
pub mod remote;
pub mod request;
pub mod tokens;

use thiserror::Error;

pub use cassette::{Cassette, CassetteMode};
pub use mock::{NoisyMock, PerfectMock, ScriptedProvider};
pub use prompt::{build_prompt, parse_answer, parse_report, PromptContext, PromptError, PromptPayload};
pub use provider::{Gateway, Provider, ProviderConfig, Usage};
pub use remote::{RemoteConfig, RemoteProvider};
pub use request::{CompletionRequest, CompletionResult, Stage};
pub use tokens::{estimate_tokens, TokenEstimator};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider exchange: {0}")]
    Malformed(String),
    #[error("cassette has no response for request {digest}")]
    CassetteMiss { digest: String },
    #[error("cassette: {0}")]
    Cassette(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}
