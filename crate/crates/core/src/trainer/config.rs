use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::agent::AgentConfig;
use crate::kg::DEFAULT_MASK_PROBABILITY;
use crate::tokenizer::DEFAULT_VOCAB_SIZE;

/// Agent variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    A2c,
    NoGat,
    NoMask,
    Unsupervised,
    Seq,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::A2c,
        Ablation::NoGat,
        Ablation::NoMask,
        Ablation::Unsupervised,
        Ablation::Seq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::A2c => "a2c",
            Ablation::NoGat => "no-gat",
            Ablation::NoMask => "no-mask",
            Ablation::Unsupervised => "unsupervised",
            Ablation::Seq => "seq",
        }
    }

    /// Whether a knowledge graph is built at all.
    pub fn builds_graph(self) -> bool {
        self != Ablation::A2c
    }

    pub fn graph_attention(self) -> bool {
        matches!(
            self,
            Ablation::Full | Ablation::NoMask | Ablation::Unsupervised | Ablation::Seq
        )
    }

    pub fn graph_mask(self) -> bool {
        matches!(
            self,
            Ablation::Full | Ablation::NoGat | Ablation::Unsupervised
        )
    }

    pub fn supervised(self) -> bool {
        self != Ablation::Unsupervised
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown ablation `{s}` (expected one of full, a2c, no-gat, no-mask, unsupervised, seq)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Bundled game name or path to a game file.
    pub game: String,
    pub ablation: Ablation,
    pub seed: u64,
    pub updates: usize,
    pub workers: usize,
    pub unroll: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub critic_weight: f64,
    pub template_weight: f64,
    pub object_weight: f64,
    pub entropy_weight: f64,
    pub clip_norm: f64,
    pub mask_probability: f64,
    pub p_valid: f64,
    pub valid_step_cap: u32,
    pub turn_cap: u32,
    /// Save a checkpoint every this many updates; 0 disables.
    pub checkpoint_every: usize,
    pub tokenizer_size: usize,
    pub agent: AgentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            game: "microzork".into(),
            ablation: Ablation::Full,
            seed: 0,
            updates: 1000,
            workers: 4,
            unroll: 8,
            gamma: 0.9,
            learning_rate: 1e-3,
            critic_weight: 0.5,
            template_weight: 1.0,
            object_weight: 1.0,
            entropy_weight: 0.01,
            clip_norm: 5.0,
            mask_probability: DEFAULT_MASK_PROBABILITY,
            p_valid: 0.5,
            valid_step_cap: 100,
            turn_cap: 1000,
            checkpoint_every: 0,
            tokenizer_size: DEFAULT_VOCAB_SIZE,
            agent: AgentConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, empty when the configuration is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            out.push(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        for (name, v) in [
            ("critic_weight", self.critic_weight),
            ("template_weight", self.template_weight),
            ("object_weight", self.object_weight),
            ("entropy_weight", self.entropy_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            out.push(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            out.push(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            ));
        }
        for (name, v) in [
            ("mask_probability", self.mask_probability),
            ("p_valid", self.p_valid),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("workers", self.workers),
            ("unroll", self.unroll),
            ("valid_step_cap", self.valid_step_cap as usize),
            ("turn_cap", self.turn_cap as usize),
        ] {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        if self.tokenizer_size < 8 {
            out.push(format!(
                "tokenizer_size must be at least 8, got {}",
                self.tokenizer_size
            ));
        }
        out.extend(
            self.agent
                .problems()
                .into_iter()
                .map(|p| format!("agent.{p}")),
        );
        out
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(problems))
        }
    }

    /// Parses JSON when the text starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let config: TrainConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| TrainError::Config(vec![e.to_string()]))?
        } else {
            toml::from_str(text).map_err(|e| TrainError::Config(vec![e.to_string()]))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
