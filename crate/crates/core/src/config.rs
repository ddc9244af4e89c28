//! The run configuration file and the run planner.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Domain, RunConfig};
use crate::prompt::{PromptSet, TemplatePaths};
use crate::providers::{ChatProvider, ProviderKind, ProviderProfile, Translator, TranslatorKind, TranslatorProfile};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct ConfigError(pub String);

/// Which named profile serves each pipeline role. Unset chat roles fall
/// back to `generation`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Roles {
    pub generation: Option<String>,
    pub validation: Option<String>,
    pub ontology: Option<String>,
    pub classification: Option<String>,
    pub translation: Option<String>,
}

/// One JSON document describing a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(default)]
    pub run_id: Option<String>,
    /// Directory holding `runs/`. Relative to the config file.
    #[serde(default)]
    pub store_dir: Option<PathBuf>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderProfile>,
    #[serde(default)]
    pub translators: BTreeMap<String, TranslatorProfile>,
    #[serde(default)]
    pub roles: Roles,
    #[serde(default)]
    pub templates: TemplatePaths,
    #[serde(default = "default_fsync")]
    pub fsync: bool,
}

fn default_fsync() -> bool {
    true
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            run_id: None,
            store_dir: None,
            run: RunConfig::default(),
            providers: BTreeMap::new(),
            translators: BTreeMap::new(),
            roles: Roles::default(),
            templates: TemplatePaths::default(),
            fsync: true,
        }
    }
}

/// Profile names resolved for every role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedRoles {
    pub generation: String,
    pub validation: String,
    pub ontology: String,
    pub classification: String,
    pub translation: String,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")))
    }

    /// Reads a config file and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.store_dir.as_mut() {
            fix(p);
        }
        for profile in self.providers.values_mut() {
            if let Some(p) = profile.fixtures.as_mut() {
                fix(p);
            }
        }
        for profile in self.translators.values_mut() {
            if let Some(p) = profile.fixtures.as_mut() {
                fix(p);
            }
        }
        for p in [
            &mut self.templates.generate,
            &mut self.templates.validate,
            &mut self.templates.ontology,
            &mut self.templates.classify,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Checks the run shape, the profiles and the role assignments.
    pub fn validate(&self) -> Result<ResolvedRoles, ConfigError> {
        self.run.validate().map_err(|e| ConfigError(e.to_string()))?;
        for (name, p) in &self.providers {
            p.validate()
                .map_err(|e| ConfigError(format!("provider `{name}`: {e}")))?;
        }
        for (name, p) in &self.translators {
            if p.kind == TranslatorKind::Replay && p.fixtures.is_none() {
                return Err(ConfigError(format!("translator `{name}`: replay needs fixtures")));
            }
            if p.kind == TranslatorKind::GoogleV2 && p.auth_env.is_none() {
                return Err(ConfigError(format!("translator `{name}`: google_v2 needs auth_env")));
            }
        }
        let only = |names: Vec<&String>| (names.len() == 1).then(|| names[0].clone());
        let generation = self
            .roles
            .generation
            .clone()
            .or_else(|| only(self.providers.keys().collect()))
            .ok_or_else(|| ConfigError("roles.generation must name a provider profile".into()))?;
        let chat = |role: &Option<String>| role.clone().unwrap_or_else(|| generation.clone());
        let roles = ResolvedRoles {
            validation: chat(&self.roles.validation),
            ontology: chat(&self.roles.ontology),
            classification: chat(&self.roles.classification),
            translation: self
                .roles
                .translation
                .clone()
                .or_else(|| only(self.translators.keys().collect()))
                .ok_or_else(|| ConfigError("roles.translation must name a translator profile".into()))?,
            generation: generation.clone(),
        };
        for name in [&roles.generation, &roles.validation, &roles.ontology, &roles.classification] {
            if !self.providers.contains_key(name) {
                return Err(ConfigError(format!("no provider profile named `{name}`")));
            }
        }
        if !self.translators.contains_key(&roles.translation) {
            return Err(ConfigError(format!(
                "no translator profile named `{}`",
                roles.translation
            )));
        }
        Ok(roles)
    }

    /// Whether any role talks to a network endpoint.
    pub fn is_networked(&self) -> bool {
        self.providers.values().any(|p| p.kind.is_networked())
            || self.translators.values().any(|t| t.kind == TranslatorKind::GoogleV2)
    }

    pub fn prompts(&self) -> Result<PromptSet, ConfigError> {
        PromptSet::load(&self.templates, Path::new(".")).map_err(|e| ConfigError(e.to_string()))
    }

    /// An offline config using the built-in synthetic model and the mock
    /// translator.
    pub fn synthetic(run: RunConfig) -> Self {
        let mut cfg = ConfigFile {
            run,
            ..ConfigFile::default()
        };
        cfg.providers.insert(
            "synthetic".into(),
            ProviderProfile {
                kind: ProviderKind::Synthetic,
                ..ProviderProfile::scripted("synthetic", Vec::new())
            },
        );
        cfg.translators.insert("mock".into(), TranslatorProfile::mock());
        cfg
    }
}

/// Live provider instances for each role. Profiles shared by several roles
/// are instantiated once so their rate limits are shared too.
#[derive(Clone)]
pub struct Services {
    pub generator: Arc<dyn ChatProvider>,
    pub validator: Arc<dyn ChatProvider>,
    pub rewriter: Arc<dyn ChatProvider>,
    pub classifier: Arc<dyn ChatProvider>,
    pub translator: Arc<dyn Translator>,
    pub prompts: Arc<PromptSet>,
}

impl Services {
    pub fn from_config(cfg: &ConfigFile) -> Result<Services, ConfigError> {
        let roles = cfg.validate()?;
        let mut built: BTreeMap<&str, Arc<dyn ChatProvider>> = BTreeMap::new();
        let mut chat = |name: &str| -> Result<Arc<dyn ChatProvider>, ConfigError> {
            if let Some(p) = built.get(name) {
                return Ok(p.clone());
            }
            let (key, profile) = cfg.providers.get_key_value(name).expect("validated role");
            let p = profile
                .build()
                .map_err(|e| ConfigError(format!("provider `{name}`: {e}")))?;
            built.insert(key, p.clone());
            Ok(p)
        };
        let generator = chat(&roles.generation)?;
        let validator = chat(&roles.validation)?;
        let rewriter = chat(&roles.ontology)?;
        let classifier = chat(&roles.classification)?;
        let translator = cfg.translators[&roles.translation]
            .build()
            .map_err(|e| ConfigError(format!("translator `{}`: {e}", roles.translation)))?;
        Ok(Services {
            generator,
            validator,
            rewriter,
            classifier,
            translator,
            prompts: Arc::new(cfg.prompts()?),
        })
    }

    /// One model for every chat role.
    pub fn uniform(model: Arc<dyn ChatProvider>, translator: Arc<dyn Translator>) -> Services {
        Services {
            generator: model.clone(),
            validator: model.clone(),
            rewriter: model.clone(),
            classifier: model,
            translator,
            prompts: Arc::new(PromptSet::defaults()),
        }
    }
}

/// Work a run will do, computed from the configuration alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub domains: Vec<Domain>,
    pub originals_per_domain: u64,
    pub perturbed_per_domain: u64,
    pub originals_total: u64,
    pub perturbed_total: u64,
    /// Members per set, original included.
    pub set_size: u64,
}

pub fn plan(config: &RunConfig) -> Plan {
    let m = u64::from(config.m);
    let n = u64::from(config.n);
    let d = config.domains.len() as u64;
    Plan {
        domains: config.domains.clone(),
        originals_per_domain: m,
        perturbed_per_domain: m * n,
        originals_total: m * d,
        perturbed_total: m * n * d,
        set_size: n + 1,
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.domains {
            writeln!(
                f,
                "{:<12} {} originals, {} perturbed tasks",
                d.title(),
                self.originals_per_domain,
                self.perturbed_per_domain
            )?;
        }
        write!(
            f,
            "{:<12} {} originals, {} perturbed tasks, {} members per set",
            "Total", self.originals_total, self.perturbed_total, self.set_size
        )
    }
}
