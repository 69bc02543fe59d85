use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use entcell::interventions::{amnesia_grid, SuccessRule, TrustThresholds, AMNESIA_STEPS, FLUENCY_PROMPTS, INJECTION_GRID};
use entcell::localization::DEFAULT_EPSILON;
use entcell::metrics::DEFAULT_K;
use entcell::{ScenarioConfig, SteeringConfig};
use serde::{Deserialize, Serialize};

use crate::ConfigError;

/// Everything a run depends on. An empty file yields the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSON-lines inventory; the built-in toy inventory when absent.
    pub inventory: Option<PathBuf>,
    /// Keep only the first N entities of the inventory.
    pub entity_limit: Option<usize>,
    /// Seeds the organism, the prompt sampler, and the steering start point.
    pub seed: u64,
    /// Localization prompts per entity.
    pub prompts_per_entity: usize,
    pub epsilon: f64,
    pub baseline_count: usize,
    pub organism: ScenarioConfig,
    pub localization: LocalizationSection,
    pub ablation: AblationSection,
    pub injection: InjectionSection,
    pub steering: SteeringSection,
    pub robustness: RobustnessSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            inventory: None,
            entity_limit: None,
            seed: 7,
            prompts_per_entity: 2,
            epsilon: DEFAULT_EPSILON,
            baseline_count: 399,
            organism: ScenarioConfig::default(),
            localization: LocalizationSection::default(),
            ablation: AblationSection::default(),
            injection: InjectionSection::default(),
            steering: SteeringSection::default(),
            robustness: RobustnessSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationSection {
    /// Ranked cells written per entity.
    pub top_n: usize,
    /// Also write the full stability table of every entity.
    pub write_tables: bool,
    /// `--check` floor on the fraction of entities whose top cell is planted.
    pub min_recovery: f64,
}

impl Default for LocalizationSection {
    fn default() -> Self {
        LocalizationSection {
            top_n: 5,
            write_tables: false,
            min_recovery: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    /// Explicit multipliers; 20 even steps from 1 to −3 when absent.
    pub alphas: Option<Vec<f64>>,
    /// Control entities per target, taken in inventory order after it.
    pub controls: usize,
    pub fluency_prompts: usize,
    /// Ablate only the first N entities.
    pub max_entities: Option<usize>,
    pub trust: TrustThresholds,
    /// `--check` floor on the trusted fraction.
    pub min_trusted: f64,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            alphas: None,
            controls: 5,
            fluency_prompts: FLUENCY_PROMPTS,
            max_entities: None,
            trust: TrustThresholds::default(),
            min_trusted: 0.9,
        }
    }
}

impl AblationSection {
    pub fn grid(&self) -> anyhow::Result<Vec<f64>> {
        match &self.alphas {
            Some(a) => Ok(a.clone()),
            None => Ok(amnesia_grid(AMNESIA_STEPS)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectionSection {
    pub alphas: Vec<f64>,
    /// Numbers of top cells to inject, each run separately.
    pub cell_counts: Vec<usize>,
    /// k of pass@k.
    pub k: usize,
    pub success: SuccessRule,
    pub max_entities: Option<usize>,
    /// `--check` floor on the correct-cell success rate.
    pub min_success: f64,
}

impl Default for InjectionSection {
    fn default() -> Self {
        InjectionSection {
            alphas: INJECTION_GRID.to_vec(),
            cell_counts: vec![1, 5],
            k: DEFAULT_K,
            success: SuccessRule::default(),
            max_entities: None,
            min_success: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringSection {
    /// Steering problem JSON; the built-in spouse problem when absent.
    pub problem: Option<PathBuf>,
    /// Injection layer; the entity's localized top-cell layer when absent.
    pub layer: Option<usize>,
    pub lambda_attack: f64,
    pub lambda_preserve: f64,
    pub lambda_l2: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_epsilon: f64,
    /// `--check`: every attack prompt must gain at least this factor.
    pub min_attack_gain: f64,
    /// `--check`: preserve ratios must stay within this band.
    pub preserve_band: [f64; 2],
}

impl Default for SteeringSection {
    fn default() -> Self {
        let d = SteeringConfig::default();
        SteeringSection {
            problem: None,
            layer: None,
            lambda_attack: d.lambda_attack,
            lambda_preserve: d.lambda_preserve,
            lambda_l2: d.lambda_l2,
            steps: d.steps,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            weight_decay: d.weight_decay,
            adam_epsilon: d.adam_epsilon,
            min_attack_gain: 10.0,
            preserve_band: [0.5, 2.0],
        }
    }
}

impl SteeringSection {
    pub fn optimizer(&self, layer: usize, seed: u64) -> SteeringConfig {
        SteeringConfig {
            layer,
            lambda_attack: self.lambda_attack,
            lambda_preserve: self.lambda_preserve,
            lambda_l2: self.lambda_l2,
            steps: self.steps,
            learning_rate: self.learning_rate,
            seed,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            adam_epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSection {
    pub max_entities: Option<usize>,
    /// Also probe never-planted names as negative controls.
    pub negative_controls: bool,
}

impl Default for RobustnessSection {
    fn default() -> Self {
        RobustnessSection {
            max_entities: None,
            negative_controls: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let fail = |m: &str| Err(ConfigError(m.to_string()).into());
        if self.prompts_per_entity == 0 {
            return fail("prompts_per_entity must be at least 1");
        }
        if self.baseline_count < 2 {
            return fail("baseline_count must be at least 2");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail("epsilon must be positive");
        }
        if self.entity_limit == Some(0) {
            return fail("entity_limit must be at least 1");
        }
        if self.injection.alphas.is_empty() || self.injection.cell_counts.is_empty() {
            return fail("injection needs alphas and cell counts");
        }
        if self.injection.cell_counts.contains(&0) || self.injection.k == 0 {
            return fail("injection cell counts and k must be at least 1");
        }
        if matches!(&self.ablation.alphas, Some(a) if a.is_empty()) {
            return fail("ablation alphas must not be empty");
        }
        if self.ablation.fluency_prompts == 0 {
            return fail("ablation needs at least one fluency prompt");
        }
        let [lo, hi] = self.steering.preserve_band;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return fail("steering preserve_band must be ordered");
        }
        Ok(())
    }

    /// The organism config with the run seed applied.
    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            seed: self.seed,
            ..self.organism.clone()
        }
    }
}

/// Parses `--alpha-grid 1,2,4` style lists.
pub fn parse_grid(text: &str) -> anyhow::Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ConfigError(format!("bad --alpha-grid `{text}`: {e}")))?;
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(ConfigError(format!("bad --alpha-grid `{text}`")).into());
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.prompts_per_entity, 2);
        assert_eq!(c.baseline_count, 399);
        assert_eq!(c.seed, 7);
        assert_eq!(c.injection.alphas, INJECTION_GRID.to_vec());
        assert_eq!(c.ablation.grid().unwrap().len(), 20);
    }

    #[test]
    fn sections_override_and_unknown_keys_fail() {
        let c = ExperimentConfig::parse("seed = 3\n[injection]\nk = 1\n[organism]\nnum_layers = 6\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.injection.k, 1);
        assert_eq!(c.scenario().seed, 3);
        assert_eq!(c.scenario().num_layers, 6);
        assert!(ExperimentConfig::parse("sed = 3").is_err());
        assert!(ExperimentConfig::parse("baseline_count = 1").is_err());
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("1, 2,-3.5").unwrap(), vec![1.0, 2.0, -3.5]);
        assert!(parse_grid("1,x").is_err());
        assert!(parse_grid("").is_err());
    }
}
