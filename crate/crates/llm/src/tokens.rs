use serde::{Deserialize, Serialize};

pub const DEFAULT_BYTES_PER_TOKEN: usize = 4;
pub const DEFAULT_SAFETY_MARGIN: f64 = 0.2;

/// Byte-count token heuristic: `ceil(bytes / bytes_per_token)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenEstimator {
    pub bytes_per_token: usize,
    /// Share of a token limit held back to absorb estimation error.
    pub safety_margin: f64,
}

impl Default for TokenEstimator {
    fn default() -> Self {
        TokenEstimator {
            bytes_per_token: DEFAULT_BYTES_PER_TOKEN,
            safety_margin: DEFAULT_SAFETY_MARGIN,
        }
    }
}

impl TokenEstimator {
    pub fn new(bytes_per_token: usize, safety_margin: f64) -> Self {
        assert!(bytes_per_token > 0, "bytes_per_token must be positive");
        assert!(
            (0.0..1.0).contains(&safety_margin),
            "safety_margin must lie in [0, 1)"
        );
        TokenEstimator {
            bytes_per_token,
            safety_margin,
        }
    }

    pub fn estimate(&self, text: &str) -> u64 {
        self.estimate_len(text.len())
    }

    pub fn estimate_len(&self, bytes: usize) -> u64 {
        bytes.div_ceil(self.bytes_per_token) as u64
    }

    /// Largest estimate accepted under `limit` once the margin is held back.
    pub fn budget(&self, limit: u64) -> u64 {
        (limit as f64 * (1.0 - self.safety_margin)).floor() as u64
    }
}

pub fn estimate_tokens(text: &str) -> u64 {
    TokenEstimator::default().estimate(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcdefgh"), 2);
        assert_eq!(estimate_tokens("abcdefghi"), 3);
        assert_eq!(TokenEstimator::new(3, 0.0).estimate("abcdefgh"), 3);
    }

    #[test]
    fn report_scale() {
        // 153,628 tokens correspond to roughly 614 KB of prompt text.
        assert_eq!(TokenEstimator::default().estimate_len(614_512), 153_628);
        assert_eq!(TokenEstimator::default().estimate_len(614_509), 153_628);
    }

    #[test]
    fn budget_applies_margin() {
        assert_eq!(TokenEstimator::default().budget(1000), 800);
        assert_eq!(TokenEstimator::new(4, 0.0).budget(1000), 1000);
    }
}
