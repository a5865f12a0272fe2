//! Experiment configuration: one JSON file with flat experiment-wide keys and one
//! section per stage. Flags override the file, the file overrides defaults.

use std::path::Path;

use mfc_core::checkpoint::sha256_hex;
use mfc_core::constraints::PretrainConfig;
use mfc_core::synthcorpus::CorpusConfig;
use mfc_core::trainer::{AblationSwitches, TrainingConfig};
use mfc_core::vcmodel::VcConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Overlays `patch` onto `base`, recursing into objects so a partial section keeps
/// the remaining defaults of that section.
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed of corpus generation, pretraining and base training.
    pub seed: u64,
    /// Adaptation seeds; reported numbers are means over them.
    pub seeds: Vec<u64>,
    /// Target speakers to adapt to; empty means all.
    pub targets: Vec<u32>,
    pub adapt_utts: usize,
    /// Utterance settings compared by `ablate`.
    pub ablate_utts: Vec<usize>,
    /// Simulation sources per step when adapting on more than one utterance.
    pub simu_batch_multi: usize,
    /// Test utterances converted to each target during evaluation.
    pub eval_sources: usize,
    pub no_style: bool,
    pub no_content: bool,
    pub no_spk: bool,
    pub no_adv: bool,
    pub no_simulation: bool,
    pub corpus: CorpusConfig,
    pub pretrain: PretrainConfig,
    pub vc: VcConfig,
    pub base: TrainingConfig,
    pub adapt: TrainingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            seeds: vec![1, 2, 3],
            targets: Vec::new(),
            adapt_utts: 1,
            ablate_utts: vec![1, 5],
            simu_batch_multi: TrainingConfig::toy_adapt(5).simu_batch,
            eval_sources: 20,
            no_style: false,
            no_content: false,
            no_spk: false,
            no_adv: false,
            no_simulation: false,
            corpus: CorpusConfig::default(),
            pretrain: PretrainConfig::default(),
            vc: VcConfig::default(),
            base: TrainingConfig::toy_base(),
            adapt: TrainingConfig::toy_adapt(1),
        }
    }
}

/// Values given on the command line; `None` leaves the file or default value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub adapt_utts: Option<usize>,
    pub targets: Option<Vec<u32>>,
}

fn hash_of(v: &impl Serialize) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("config serializes"))
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let bytes = std::fs::read(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let bad = |e: serde_json::Error| CliError::Config(format!("{}: {e}", p.display()));
                let file: serde_json::Value = serde_json::from_slice(&bytes).map_err(bad)?;
                let mut merged = serde_json::to_value(Self::default()).map_err(bad)?;
                merge(&mut merged, file);
                serde_json::from_value(merged).map_err(bad)?
            }
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(s) = &overrides.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(n) = overrides.adapt_utts {
            cfg.adapt_utts = n;
        }
        if let Some(t) = &overrides.targets {
            cfg.targets = t.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.adapt_utts == 0 || self.ablate_utts.contains(&0) {
            return bad("adaptation needs at least one utterance".into());
        }
        for &n in std::iter::once(&self.adapt_utts).chain(&self.ablate_utts) {
            if n > self.corpus.adapt_utts {
                return bad(format!(
                    "{n} adaptation utterances requested, corpus provides {}",
                    self.corpus.adapt_utts
                ));
            }
        }
        if self.eval_sources == 0 {
            return bad("eval_sources must be positive".into());
        }
        self.pretrain_config().validate().or_else(|e| bad(e.to_string()))?;
        self.base_config().validate().or_else(|e| bad(e.to_string()))?;
        for n in std::iter::once(self.adapt_utts).chain(self.ablate_utts.iter().copied()) {
            self.adapt_config(&self.ablation(), n, self.seeds[0])
                .validate()
                .or_else(|e| bad(e.to_string()))?;
        }
        Ok(())
    }

    /// Ablation switches given by the flat `no_*` keys.
    pub fn ablation(&self) -> AblationSwitches {
        AblationSwitches {
            no_style: self.no_style,
            no_content: self.no_content,
            no_spk: self.no_spk,
            no_adv: self.no_adv,
            no_simulation: self.no_simulation,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            seed: self.seed,
            ..self.pretrain.clone()
        }
    }

    pub fn base_config(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            alpha: 0.0,
            ..self.base.clone()
        }
    }

    /// Adaptation schedule for `n` utterances, one ablation variant and one seed.
    pub fn adapt_config(&self, ablation: &AblationSwitches, n: usize, seed: u64) -> TrainingConfig {
        let simu_batch = if n > 1 && self.adapt.simu_batch > 0 {
            self.simu_batch_multi
        } else {
            self.adapt.simu_batch
        };
        TrainingConfig {
            seed,
            alpha: 1.0,
            simu_batch,
            ..self.adapt.clone()
        }
        .with_ablation(ablation)
    }

    pub fn corpus_hash(&self) -> String {
        hash_of(&(self.seed, &self.corpus))
    }

    pub fn pretrain_hash(&self) -> String {
        hash_of(&self.pretrain_config())
    }

    pub fn base_hash(&self) -> String {
        hash_of(&(&self.vc, &self.base_config()))
    }

    pub fn adapt_hash(&self, cfg: &TrainingConfig, target: u32, n: usize) -> String {
        hash_of(&(cfg, target, n))
    }

    pub fn eval_hash(&self) -> String {
        hash_of(&(self.eval_sources, &self.seeds, &self.targets))
    }

    pub fn ablate_hash(&self) -> String {
        hash_of(&(self.eval_hash(), &self.ablate_utts))
    }
}

/// Name of an ablation variant: `full`, the single removed component, or the
/// removed components joined by `+`.
pub fn variant_name(a: &AblationSwitches) -> String {
    let parts: Vec<&str> = [
        (a.no_style, "no_style"),
        (a.no_content, "no_content"),
        (a.no_spk, "no_spk"),
        (a.no_adv, "no_adv"),
        (a.no_simulation, "no_simulation"),
    ]
    .iter()
    .filter(|(on, _)| *on)
    .map(|(_, n)| *n)
    .collect();
    if parts.is_empty() {
        "full".into()
    } else {
        parts.join("+")
    }
}
