use serde::{Deserialize, Serialize};

use super::{Domain, DomainError};

/// Sampling parameters sent with every chat request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Fixed seed used with providers that honor one.
pub const DEFAULT_PROVIDER_SEED: u64 = 1234;

impl ProviderParams {
    /// Parameters used while generating and perturbing tasks.
    pub fn generation() -> Self {
        ProviderParams {
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: 8096,
            frequency_penalty: 1.0,
            presence_penalty: 1.0,
            seed: Some(DEFAULT_PROVIDER_SEED),
        }
    }

    /// Parameters used while classifying tasks.
    pub fn classification() -> Self {
        ProviderParams {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 8096,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            seed: Some(DEFAULT_PROVIDER_SEED),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ProviderParams {
            seed: Some(seed),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewMode {
    /// Every pending item is accepted without human input.
    #[default]
    AutoAccept,
    /// Items wait for expert decisions through the review service.
    Manual,
}

/// Experiment shape: how many tasks, which domains, which seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Original tasks per domain.
    pub m: u32,
    /// Perturbed variants per original task.
    pub n: u32,
    pub domains: Vec<Domain>,
    pub generation_params: ProviderParams,
    pub classification_params: ProviderParams,
    pub seed: u64,
    pub review_mode: ReviewMode,
    /// Regenerate rejected variants so every set keeps `n` members.
    /// When false, rejected variants are simply removed.
    pub refill: bool,
    /// Fraction of originals routed to expert spot checks.
    pub spot_check_rate: f64,
    pub reclassify_originals: bool,
    /// Allow `n > 3`, which reuses translation languages across variants.
    pub allow_language_wrap: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            m: 34,
            n: 3,
            domains: Domain::ALL.to_vec(),
            generation_params: ProviderParams::generation(),
            classification_params: ProviderParams::classification(),
            seed: 0,
            review_mode: ReviewMode::AutoAccept,
            refill: true,
            spot_check_rate: 0.10,
            reclassify_originals: false,
            allow_language_wrap: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |msg: String| Err(DomainError::InvalidConfig(msg));
        if self.m < 1 {
            return bad(format!("m must be at least 1 (got {})", self.m));
        }
        if self.n < 1 {
            return bad(format!("n must be at least 1 (got {})", self.n));
        }
        if self.n > 3 && !self.allow_language_wrap {
            return bad(format!(
                "n = {} exceeds the 3 translation languages; set allow_language_wrap to reuse them",
                self.n
            ));
        }
        if self.domains.is_empty() {
            return bad("at least one domain is required".into());
        }
        let mut seen = self.domains.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.domains.len() {
            return bad("domains must not repeat".into());
        }
        if !(0.0..=1.0).contains(&self.spot_check_rate) {
            return bad(format!(
                "spot_check_rate must lie in [0, 1] (got {})",
                self.spot_check_rate
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provider_defaults_match_reported_parameters() {
        let g = ProviderParams::generation();
        assert_eq!(
            (g.temperature, g.top_p, g.max_tokens, g.frequency_penalty, g.presence_penalty),
            (1.0, 1.0, 8096, 1.0, 1.0)
        );
        let c = ProviderParams::classification();
        assert_eq!(
            (c.temperature, c.top_p, c.max_tokens, c.frequency_penalty, c.presence_penalty),
            (0.0, 1.0, 8096, 0.0, 0.0)
        );
        assert_eq!(c.seed, Some(1234));
    }

    #[test]
    fn default_run_shape() {
        let cfg = RunConfig::default();
        assert_eq!((cfg.m, cfg.n, cfg.domains.len()), (34, 3, 4));
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn validation_rejects_degenerate_shapes() {
        let mut cfg = RunConfig { m: 0, ..RunConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.m = 1;
        cfg.n = 4;
        assert!(cfg.validate().is_err());
        cfg.allow_language_wrap = true;
        assert!(cfg.validate().is_ok());
        cfg.domains = vec![Domain::Science, Domain::Science];
        assert!(cfg.validate().is_err());
    }
}
