use serde::{Deserialize, Serialize};

use crate::constraints::FakeTerm;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// 0 for base training, 1 for adaptation.
    pub alpha: f64,
    pub lambda_spk: f64,
    pub lambda_c: f64,
    pub lambda_adv: f64,
    /// Multiplier on every style term; 1 unless style matching is ablated.
    pub style_weight: f64,
    /// Coefficient of the parameter-anchoring penalty.
    pub weight_reg: f64,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub disc_update_every: usize,
    /// Simulation sources per adaptation step; 0 disables simulation.
    pub simu_batch: usize,
    pub seed: u64,
    pub fake_term: FakeTerm,
    /// Adds mean absolute mel error to the mel term.
    pub mel_l1: bool,
    /// Runs reconstruction and simulation on alternate steps instead of summing them.
    pub alternate_modes: bool,
    /// Random training windows of this many frames; 0 uses whole utterances.
    pub crop_frames: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::base_published()
    }
}

impl TrainingConfig {
    /// Base-phase schedule and weights as published.
    pub fn base_published() -> Self {
        Self {
            alpha: 0.0,
            lambda_spk: 0.1,
            lambda_c: 1.0,
            lambda_adv: 0.05,
            style_weight: 1.0,
            weight_reg: 0.01,
            lr_init: 5e-5,
            lr_decay: 0.5,
            decay_every: 30,
            epochs: 400,
            batch_size: 8,
            disc_update_every: 1,
            simu_batch: 0,
            seed: 1,
            fake_term: FakeTerm::Squared,
            mel_l1: false,
            alternate_modes: false,
            crop_frames: 0,
        }
    }

    /// Adaptation-phase weights as published; `simu_batch` is 10 for one
    /// adaptation utterance and 25 for five.
    pub fn adapt_published(adapt_utts: usize) -> Self {
        Self {
            alpha: 1.0,
            lambda_spk: 0.1,
            lambda_c: 0.1,
            lambda_adv: 0.05,
            simu_batch: if adapt_utts <= 1 { 10 } else { 25 },
            ..Self::base_published()
        }
    }

    /// Desk-scale base run: 40 epochs at a learning rate suited to the toy model.
    pub fn toy_base() -> Self {
        Self {
            lr_init: 2e-3,
            epochs: 40,
            ..Self::base_published()
        }
    }

    /// Desk-scale adaptation: 200 steps, one step per epoch.
    pub fn toy_adapt(adapt_utts: usize) -> Self {
        Self {
            lr_init: 1e-3,
            epochs: 200,
            decay_every: 100,
            ..Self::adapt_published(adapt_utts)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha != 0.0 && self.alpha != 1.0 {
            return Err(Error::Contract(format!("alpha must be 0 or 1, got {}", self.alpha)));
        }
        let weights = [
            self.lambda_spk,
            self.lambda_c,
            self.lambda_adv,
            self.style_weight,
            self.weight_reg,
        ];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.lr_init > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("need lr_init > 0 and 0 < lr_decay <= 1".into()));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.disc_update_every == 0 {
            return Err(Error::Config(
                "decay_every, batch_size and disc_update_every must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_at(self.lr_init, self.lr_decay, self.decay_every, epoch)
    }

    pub fn with_ablation(mut self, a: &AblationSwitches) -> Self {
        if a.no_style {
            self.style_weight = 0.0;
        }
        if a.no_content {
            self.lambda_c = 0.0;
        }
        if a.no_spk {
            self.lambda_spk = 0.0;
        }
        if a.no_adv {
            self.lambda_adv = 0.0;
        }
        if a.no_simulation {
            self.simu_batch = 0;
        }
        self
    }
}

/// `lr_init * decay^floor(epoch / decay_every)`.
pub fn lr_at(lr_init: f64, decay: f64, decay_every: usize, epoch: usize) -> f64 {
    lr_init * decay.powi((epoch / decay_every.max(1)) as i32)
}

/// Components removed from the adaptation objective, one per ablation row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSwitches {
    pub no_style: bool,
    pub no_content: bool,
    pub no_spk: bool,
    pub no_adv: bool,
    pub no_simulation: bool,
}

impl AblationSwitches {
    /// The full model followed by one variant per removed component.
    pub fn variants() -> [(&'static str, AblationSwitches); 6] {
        let none = AblationSwitches::default();
        [
            ("full", none),
            ("no_style", AblationSwitches { no_style: true, ..none }),
            ("no_content", AblationSwitches { no_content: true, ..none }),
            ("no_spk", AblationSwitches { no_spk: true, ..none }),
            ("no_adv", AblationSwitches { no_adv: true, ..none }),
            ("no_simulation", AblationSwitches { no_simulation: true, ..none }),
        ]
    }
}

/// Per-term weights of one objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Weights {
    pub mel: f64,
    pub spk_ce: f64,
    pub spk_cos: f64,
    pub content: f64,
    pub style_l: f64,
    pub style_m: f64,
    pub style_h: f64,
    pub adv: f64,
    pub wreg: f64,
}

impl Weights {
    /// Reconstruction objective:
    /// `mel + (1-a) spk_ce + a l_spk spk_cos + l_c content + style_{l,m,h} + l_adv adv + a wreg`.
    pub fn recon(cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let a = cfg.alpha;
        Ok(Self {
            mel: 1.0,
            spk_ce: 1.0 - a,
            spk_cos: a * cfg.lambda_spk,
            content: cfg.lambda_c,
            style_l: cfg.style_weight,
            style_m: cfg.style_weight,
            style_h: cfg.style_weight,
            adv: cfg.lambda_adv,
            wreg: a,
        })
    }

    /// Simulation objective: `l_spk spk_cos + l_c content + style_{m,h} + l_adv adv`.
    pub fn simu(cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            spk_cos: cfg.lambda_spk,
            content: cfg.lambda_c,
            style_m: cfg.style_weight,
            style_h: cfg.style_weight,
            adv: cfg.lambda_adv,
            ..Self::default()
        })
    }
}
