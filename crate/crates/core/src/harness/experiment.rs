//! Experiment configuration and the pretrain → fine-tune pipelines.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{rft, sft, RftConfig, RftOutcome, SftConfig};
use crate::harness::corpus::read_corpus;
use crate::harness::eval::{evaluate, EvalReport};
use crate::harness::metrics::PdmsThresholds;
use crate::imitation::{pretrain, PretrainConfig, PretrainOutcome};
use crate::model::{ModelConfig, PolicySnapshot};
use crate::world::{generate_corpus, Difficulty, Scenario};

/// Synthetic data split sizes. Seeds of the three splits never overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub difficulty: Difficulty,
    pub train: usize,
    pub val: usize,
    pub heldout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { difficulty: Difficulty::Medium, train: 200, val: 40, heldout: 150 }
    }
}

const SPLIT_STRIDE: u64 = 100_000;
const HELDOUT_OFFSET: u64 = 1 << 40;

impl DataConfig {
    pub fn train_base(seed: u64) -> u64 {
        seed * SPLIT_STRIDE
    }

    pub fn val_base(seed: u64) -> u64 {
        seed * SPLIT_STRIDE + SPLIT_STRIDE / 2
    }

    pub fn heldout_base(seed: u64) -> u64 {
        HELDOUT_OFFSET + seed * SPLIT_STRIDE
    }

    pub fn validate(&self) -> Result<()> {
        let max = (SPLIT_STRIDE / 2) as usize;
        if self.train == 0 || self.train > max || self.val > max || self.heldout > max {
            return Err(Error::Config(format!("split sizes must lie in 1..={max}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub rft: RftConfig,
    pub sft: SftConfig,
    pub thresholds: PdmsThresholds,
    /// Optional corpus files overriding the generated splits.
    pub train_corpus: Option<PathBuf>,
    pub heldout_corpus: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            model: ModelConfig::compact(),
            data: DataConfig::default(),
            pretrain: PretrainConfig::default(),
            rft: RftConfig::default(),
            sft: SftConfig::default(),
            thresholds: PdmsThresholds::default(),
            train_corpus: None,
            heldout_corpus: None,
        }
    }
}

impl ExperimentConfig {
    /// Applies `seed` to every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.pretrain.seed = seed;
        self.rft.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        self.pretrain.validate()?;
        self.rft.validate()?;
        self.sft.weights.validate()?;
        if self.model.planner.horizon != 6 || (self.model.planner.dt - 0.5).abs() > 1e-12 {
            return Err(Error::Config(
                "the generator produces 6 points at 0.5 s; planner horizon and dt must match".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub struct Splits {
    pub train: Vec<Scenario>,
    pub val: Vec<Scenario>,
    pub heldout: Vec<Scenario>,
}

/// Generated (or loaded) train / validation / held-out corpora.
pub fn splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let d = &cfg.data;
    let train = match &cfg.train_corpus {
        Some(p) => read_corpus(p)?,
        None => generate_corpus(d.train, d.difficulty, DataConfig::train_base(cfg.seed))?,
    };
    let heldout = match &cfg.heldout_corpus {
        Some(p) => read_corpus(p)?,
        None => generate_corpus(d.heldout, d.difficulty, DataConfig::heldout_base(cfg.seed))?,
    };
    let val = generate_corpus(d.val, d.difficulty, DataConfig::val_base(cfg.seed))?;
    Ok(Splits { train, val, heldout })
}

pub fn pretrain_stage(cfg: &ExperimentConfig, s: &Splits) -> Result<PretrainOutcome> {
    let init = PolicySnapshot::new(cfg.model.clone(), cfg.seed)?;
    pretrain(&init, &s.train, &s.val, &cfg.pretrain)
}

pub fn rft_stage(cfg: &ExperimentConfig, reference: &PolicySnapshot, s: &Splits) -> Result<RftOutcome> {
    rft(reference, &s.train, &cfg.rft)
}

pub fn sft_stage(cfg: &ExperimentConfig, reference: &PolicySnapshot, s: &Splits) -> Result<PolicySnapshot> {
    Ok(sft(reference, &s.train, &cfg.rft, &cfg.sft)?.0)
}

/// Held-out reports of the pretrained, fine-tuned and SFT policies.
pub struct PipelineResult {
    pub pretrained: PolicySnapshot,
    pub finetuned: PolicySnapshot,
    pub sft: Option<PolicySnapshot>,
    pub before: EvalReport,
    pub after: EvalReport,
    pub sft_report: Option<EvalReport>,
    pub pretrain: PretrainOutcome,
    pub rft: RftOutcome,
}

pub fn run_pipeline(cfg: &ExperimentConfig, with_sft: bool) -> Result<PipelineResult> {
    cfg.validate()?;
    let s = splits(cfg)?;
    let pre = pretrain_stage(cfg, &s)?;
    let reference = pre.policy.clone();
    let before = evaluate(&reference, &s.heldout, None)?;
    let fine = rft_stage(cfg, &reference, &s)?;
    let after = evaluate(&fine.policy, &s.heldout, None)?;
    let (sft_pol, sft_report) = if with_sft {
        let p = sft_stage(cfg, &reference, &s)?;
        let r = evaluate(&p, &s.heldout, None)?;
        (Some(p), Some(r))
    } else {
        (None, None)
    };
    Ok(PipelineResult {
        pretrained: reference,
        finetuned: fine.policy.clone(),
        sft: sft_pol,
        before,
        after,
        sft_report,
        pretrain: pre,
        rft: fine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig::default().with_seed(4);
        let text = cfg.to_json();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model, ModelConfig::compact());
    }

    #[test]
    fn splits_are_disjoint() {
        let cfg = ExperimentConfig {
            data: DataConfig { train: 5, val: 3, heldout: 4, ..DataConfig::default() },
            ..ExperimentConfig::default()
        }
        .with_seed(2);
        let s = splits(&cfg).unwrap();
        let mut seeds: Vec<u64> = s.train.iter().chain(&s.val).chain(&s.heldout).map(|x| x.seed).collect();
        let n = seeds.len();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), n);
    }

    #[test]
    fn mismatched_horizon_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.planner.horizon = 8;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
