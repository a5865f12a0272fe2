use serde::{Deserialize, Serialize};

use super::config::{TrainingConfig, Weights};
use crate::constraints::{
    loss_adv, loss_spk_cos, Auxiliaries, Auxiliary, Discriminator, SpeakerEmbedding, StyleLevel,
};
use crate::params::{Bound, ParamSet};
use crate::synthcorpus::Utterance;
use crate::vcmodel::{ContentFeatures, Decode, VcModel};
use crate::{Error, Graph, Result, Var};

/// Per-term values of one objective, averaged over its items. Absent terms are
/// `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mel: Option<f64>,
    pub spk_ce: Option<f64>,
    pub spk_cos: Option<f64>,
    pub content: Option<f64>,
    pub style_l: Option<f64>,
    pub style_m: Option<f64>,
    pub style_h: Option<f64>,
    pub adv: Option<f64>,
    pub wreg: Option<f64>,
    pub total_recon: Option<f64>,
    pub total_simu: Option<f64>,
    /// Discriminator objective, on discriminator steps only.
    pub real_fake: Option<f64>,
}

impl LossBreakdown {
    /// Weighted sum of the present terms.
    pub fn weighted(&self, w: &Weights) -> f64 {
        [
            (self.mel, w.mel),
            (self.spk_ce, w.spk_ce),
            (self.spk_cos, w.spk_cos),
            (self.content, w.content),
            (self.style_l, w.style_l),
            (self.style_m, w.style_m),
            (self.style_h, w.style_h),
            (self.adv, w.adv),
            (self.wreg, w.wreg),
        ]
        .iter()
        .filter_map(|(v, w)| v.map(|v| v * w))
        .sum()
    }
}

/// Self-reconstruction example: content, prosody and speaker all come from `utt`.
#[derive(Clone, Copy, Debug)]
pub struct ReconItem<'a> {
    pub utt: &'a Utterance,
    pub content: &'a ContentFeatures,
    pub speaker: &'a SpeakerEmbedding,
    /// Seed of the prenet dropout mask; `None` decodes with plain teacher forcing.
    pub dropout_seed: Option<u64>,
}

/// Simulated conversion of `source` to another speaker.
#[derive(Clone, Copy, Debug)]
pub struct SimuItem<'a> {
    pub source: &'a Utterance,
    pub content: &'a ContentFeatures,
    pub target_id: u32,
    pub target: &'a SpeakerEmbedding,
}

/// Graph bindings of the conversion model and the frozen networks for one step.
pub struct Session<'a> {
    pub vc: &'a VcModel,
    pub vc_b: Bound,
    pub aux: &'a Auxiliaries,
    pub disc: &'a Discriminator,
    /// Base parameters for the weight penalty.
    pub anchor: Option<&'a ParamSet>,
    content_b: Bound,
    ser_b: Bound,
    ind_b: Bound,
    clf_b: Bound,
    disc_b: Bound,
}

impl<'a> Session<'a> {
    pub fn bind(
        g: &mut Graph,
        vc: &'a VcModel,
        trainable: bool,
        aux: &'a Auxiliaries,
        disc: &'a Discriminator,
        anchor: Option<&'a ParamSet>,
    ) -> Result<Self> {
        aux.require_frozen()?;
        Ok(Self {
            vc,
            vc_b: vc.bind(g, trainable),
            aux,
            disc,
            anchor,
            content_b: aux.content.bind(g),
            ser_b: aux.ser.bind(g),
            ind_b: aux.indicator.bind(g),
            clf_b: aux.classifier.bind(g),
            disc_b: disc.params.bind(g, false),
        })
    }
}

/// Objective value plus the predicted mels it was computed from.
pub struct Objective {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub predictions: Vec<Var>,
}

#[derive(Default)]
struct Acc {
    terms: [Option<Var>; 8],
}

const MEL: usize = 0;
const SPK_CE: usize = 1;
const SPK_COS: usize = 2;
const CONTENT: usize = 3;
const STYLE_L: usize = 4;
const STYLE_M: usize = 5;
const STYLE_H: usize = 6;
const ADV: usize = 7;

impl Acc {
    fn add(&mut self, g: &mut Graph, slot: usize, v: Var) -> Result<()> {
        self.terms[slot] = Some(match self.terms[slot] {
            Some(a) => g.add(a, v)?,
            None => v,
        });
        Ok(())
    }

    fn averaged(self, g: &mut Graph, n: usize) -> [Option<Var>; 8] {
        self.terms.map(|t| t.map(|v| g.scale(v, 1.0 / n as f64)))
    }
}

fn weight_of(w: &Weights, slot: usize) -> f64 {
    [w.mel, w.spk_ce, w.spk_cos, w.content, w.style_l, w.style_m, w.style_h, w.adv][slot]
}

/// Terms shared by both objectives, computed for one predicted mel.
#[allow(clippy::too_many_arguments)]
fn constraint_terms(
    g: &mut Graph,
    s: &Session,
    w: &Weights,
    acc: &mut Acc,
    source: Var,
    pred: Var,
    target: Var,
    levels: &[StyleLevel],
) -> Result<()> {
    if w.spk_cos != 0.0 {
        let e = s.aux.indicator.embed_in(g, &s.ind_b, pred)?;
        let l = loss_spk_cos(g, e, target)?;
        acc.add(g, SPK_COS, l)?;
    }
    if w.content != 0.0 {
        let l = s.aux.content.loss_content(g, &s.content_b, source, pred)?;
        acc.add(g, CONTENT, l)?;
    }
    let levels: Vec<StyleLevel> = levels
        .iter()
        .copied()
        .filter(|l| match l {
            StyleLevel::L => w.style_l != 0.0,
            StyleLevel::M => w.style_m != 0.0,
            StyleLevel::H => w.style_h != 0.0,
        })
        .collect();
    if !levels.is_empty() {
        let ls = s.aux.ser.loss_style(g, &s.ser_b, source, pred, &levels)?;
        for (level, l) in levels.iter().zip(ls) {
            let slot = match level {
                StyleLevel::L => STYLE_L,
                StyleLevel::M => STYLE_M,
                StyleLevel::H => STYLE_H,
            };
            acc.add(g, slot, l)?;
        }
    }
    if w.adv != 0.0 {
        let d = s.disc.score_in(g, &s.disc_b, pred)?;
        let l = loss_adv(g, d)?;
        acc.add(g, ADV, l)?;
    }
    Ok(())
}

fn finish(
    g: &mut Graph,
    w: &Weights,
    terms: [Option<Var>; 8],
    wreg: Option<Var>,
) -> Result<(Var, LossBreakdown)> {
    let mut total: Option<Var> = None;
    let mut push = |g: &mut Graph, v: Var, weight: f64| -> Result<()> {
        let t = g.scale(v, weight);
        total = Some(match total {
            Some(a) => g.add(a, t)?,
            None => t,
        });
        Ok(())
    };
    for (slot, t) in terms.iter().enumerate() {
        if let Some(v) = *t {
            push(g, v, weight_of(w, slot))?;
        }
    }
    if let Some(v) = wreg {
        push(g, v, w.wreg)?;
    }
    let total = total.ok_or_else(|| Error::Contract("objective has no terms".into()))?;
    let val = |t: Option<Var>| t.map(|v| g.item(v));
    let b = LossBreakdown {
        mel: val(terms[MEL]),
        spk_ce: val(terms[SPK_CE]),
        spk_cos: val(terms[SPK_COS]),
        content: val(terms[CONTENT]),
        style_l: val(terms[STYLE_L]),
        style_m: val(terms[STYLE_M]),
        style_h: val(terms[STYLE_H]),
        adv: val(terms[ADV]),
        wreg: val(wreg),
        ..LossBreakdown::default()
    };
    Ok((total, b))
}

/// Reconstruction objective over `items`, teacher-forced against each ground-truth mel.
pub fn loss_recon(
    g: &mut Graph,
    s: &Session,
    items: &[ReconItem],
    cfg: &TrainingConfig,
) -> Result<Objective> {
    let w = Weights::recon(cfg)?;
    if items.is_empty() {
        return Err(Error::Contract("reconstruction batch is empty".into()));
    }
    let mut acc = Acc::default();
    let mut predictions = Vec::with_capacity(items.len());
    for it in items {
        let y = g.constant(it.utt.mel.clone());
        let c = g.constant(it.content.tensor().clone());
        let f = g.constant(it.utt.prosody());
        let z = g.constant(it.speaker.to_tensor());
        let styles = s.vc.extract_styles_in(g, &s.vc_b, c, f)?;
        let mode = match it.dropout_seed {
            Some(seed) => Decode::TeacherForcedDropout(y, seed),
            None => Decode::TeacherForced(y),
        };
        let pred = s.vc.convert_in(g, &s.vc_b, c, z, &styles, mode)?;
        let mut mel = g.mse(pred, y)?;
        if cfg.mel_l1 {
            let d = g.sub(pred, y)?;
            let d = g.abs(d);
            let l1 = g.mean(d);
            mel = g.add(mel, l1)?;
        }
        acc.add(g, MEL, mel)?;
        if w.spk_ce != 0.0 {
            let l = s.aux.classifier.loss_spk_ce(g, &s.clf_b, pred, it.utt.speaker_id)?;
            acc.add(g, SPK_CE, l)?;
        }
        constraint_terms(g, s, &w, &mut acc, y, pred, z, &StyleLevel::ALL)?;
        predictions.push(pred);
    }
    let terms = acc.averaged(g, items.len());
    let wreg = if w.wreg != 0.0 {
        let anchor = s
            .anchor
            .ok_or_else(|| Error::Contract("weight regularization needs base parameters".into()))?;
        Some(loss_weight_reg(g, &s.vc_b, &s.vc.params, anchor, cfg.weight_reg)?)
    } else {
        None
    };
    let (total, mut breakdown) = finish(g, &w, terms, wreg)?;
    breakdown.total_recon = Some(g.item(total));
    Ok(Objective {
        total,
        breakdown,
        predictions,
    })
}

/// Simulation objective: each source is converted free-running to its target
/// speaker. No ground-truth mel of the converted speech exists, so there is no mel
/// term and no low-level style term.
pub fn loss_simu(
    g: &mut Graph,
    s: &Session,
    items: &[SimuItem],
    cfg: &TrainingConfig,
) -> Result<Objective> {
    let w = Weights::simu(cfg)?;
    if items.is_empty() {
        return Err(Error::Contract("simulation batch is empty".into()));
    }
    let mut acc = Acc::default();
    let mut predictions = Vec::with_capacity(items.len());
    for it in items {
        if it.source.speaker_id == it.target_id {
            return Err(Error::Contract(format!(
                "simulation source belongs to target speaker {}",
                it.target_id
            )));
        }
        let x = g.constant(it.source.mel.clone());
        let c = g.constant(it.content.tensor().clone());
        let f = g.constant(it.source.prosody());
        let z = g.constant(it.target.to_tensor());
        let styles = s.vc.extract_styles_in(g, &s.vc_b, c, f)?;
        let pred = s.vc.convert_in(g, &s.vc_b, c, z, &styles, Decode::FreeRunning)?;
        constraint_terms(g, s, &w, &mut acc, x, pred, z, &[StyleLevel::M, StyleLevel::H])?;
        predictions.push(pred);
    }
    let terms = acc.averaged(g, items.len());
    let (total, mut breakdown) = finish(g, &w, terms, None)?;
    breakdown.total_simu = Some(g.item(total));
    Ok(Objective {
        total,
        breakdown,
        predictions,
    })
}

/// `mu * mean((theta - theta_base)^2)` over every scalar of the conversion model.
pub fn loss_weight_reg(
    g: &mut Graph,
    bound: &Bound,
    params: &ParamSet,
    anchor: &ParamSet,
    mu: f64,
) -> Result<Var> {
    if !params.same_layout(anchor) {
        return Err(Error::Contract(
            "weight regularization: parameter names or shapes differ from the base".into(),
        ));
    }
    let mut acc: Option<Var> = None;
    for (name, base) in anchor.iter() {
        let theta = bound.var(name);
        let b = g.constant(base.clone());
        let d = g.sub(theta, b)?;
        let sq = g.dot(d, d)?;
        acc = Some(match acc {
            Some(a) => g.add(a, sq)?,
            None => sq,
        });
    }
    let acc = acc.ok_or_else(|| Error::Contract("no parameters to regularize".into()))?;
    Ok(g.scale(acc, mu / anchor.num_scalars() as f64))
}
