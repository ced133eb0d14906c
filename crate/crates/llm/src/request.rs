use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tokens::TokenEstimator;
use crate::LlmError;

/// Pipeline step a request belongs to. Carried on the request so providers,
/// cassettes and usage reports can tell calls apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Describe,
    Classify,
    Consensus,
    FinalReport,
    SynthDescription,
    SynthSeed,
    Summarize,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Describe,
        Stage::Classify,
        Stage::Consensus,
        Stage::FinalReport,
        Stage::SynthDescription,
        Stage::SynthSeed,
        Stage::Summarize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Describe => "describe",
            Stage::Classify => "classify",
            Stage::Consensus => "consensus",
            Stage::FinalReport => "final_report",
            Stage::SynthDescription => "synth_description",
            Stage::SynthSeed => "synth_seed",
            Stage::Summarize => "summarize",
        }
    }

    /// Sampled stages run hot so repeated runs differ; the rest run at 0.
    pub fn default_temperature(self) -> f64 {
        match self {
            Stage::Describe | Stage::Classify | Stage::SynthDescription | Stage::SynthSeed => 1.0,
            Stage::Consensus | Stage::FinalReport | Stage::Summarize => 0.0,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub stage: Stage,
    pub template_version: u32,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.user_text.is_empty() {
            return Err(LlmError::InvalidRequest("user_text is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} is not a finite value >= 0",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical JSON encoding. Equal requests always
    /// share a digest.
    pub fn digest(&self) -> String {
        let encoded = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&encoded))
    }

    pub fn estimated_input_tokens(&self, estimator: &TokenEstimator) -> u64 {
        estimator.estimate_len(self.system_text.len() + self.user_text.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> CompletionRequest {
        CompletionRequest {
            stage: Stage::Classify,
            template_version: 1,
            system_text: "sys".into(),
            user_text: user.into(),
            temperature: 1.0,
            max_output_tokens: 100,
            seed: Some(3),
        }
    }

    #[test]
    fn digest_tracks_content() {
        assert_eq!(req("a").digest(), req("a").digest());
        assert_ne!(req("a").digest(), req("b").digest());
        let mut other = req("a");
        other.seed = Some(4);
        assert_ne!(other.digest(), req("a").digest());
        assert_eq!(req("a").digest().len(), 64);
    }

    #[test]
    fn validation_rejects_empty_user_text_and_bad_temperature() {
        assert!(req("").validate().is_err());
        let mut r = req("x");
        r.temperature = -0.5;
        assert!(r.validate().is_err());
        r.temperature = f64::NAN;
        assert!(r.validate().is_err());
        assert!(req("x").validate().is_ok());
    }
}
