use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use super::objective::{loss_recon, loss_simu, LossBreakdown, ReconItem, Session, SimuItem};
use crate::checkpoint::Checkpoint;
use crate::constraints::{
    loss_real_fake, Auxiliaries, Auxiliary, Discriminator, SpeakerEmbedding,
};
use crate::optim::{Adam, AdamConfig};
use crate::synthcorpus::{derive_seed, Corpus, Split, Utterance, FRAMES_PER_TOKEN};
use crate::vcmodel::{ContentFeatures, VcConfig, VcModel};
use crate::{Error, Graph, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Recon,
    Simu,
    Disc,
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub mode: Mode,
    pub lr: f64,
    pub breakdown: LossBreakdown,
}

/// Recogniser features of every corpus utterance, by position.
#[derive(Clone, Debug)]
pub struct ContentCache(Vec<ContentFeatures>);

impl ContentCache {
    pub fn build(corpus: &Corpus, aux: &Auxiliaries) -> Result<Self> {
        corpus
            .utterances
            .iter()
            .map(|u| ContentFeatures::new(aux.asr.features(&u.mel)?))
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn get(&self, index: usize) -> &ContentFeatures {
        &self.0[index]
    }
}

/// Indicator centroid of every base speaker over its training utterances.
pub fn speaker_centroids(
    corpus: &Corpus,
    aux: &Auxiliaries,
) -> Result<BTreeMap<u32, SpeakerEmbedding>> {
    let train = corpus.train();
    corpus
        .base_speaker_ids()
        .into_iter()
        .map(|s| {
            let utts: Vec<&Utterance> = train.iter().copied().filter(|u| u.speaker_id == s).collect();
            Ok((s, aux.centroid(&utts)?))
        })
        .collect()
}

/// A token-aligned window of `len` frames, or the whole utterance.
fn window(
    rng: &mut ChaCha8Rng,
    utt: &Utterance,
    feats: &ContentFeatures,
    len: usize,
) -> Result<(Utterance, ContentFeatures)> {
    let t = utt.frames();
    if len == 0 || t <= len {
        return Ok((utt.clone(), feats.clone()));
    }
    let tokens = len.div_ceil(FRAMES_PER_TOKEN);
    let len = tokens * FRAMES_PER_TOKEN;
    let first = rng.random_range(0..=(t - len) / FRAMES_PER_TOKEN);
    let start = first * FRAMES_PER_TOKEN;
    let rows = |m: &Tensor| {
        let c = m.cols();
        Tensor::matrix(len, c, m.data()[start * c..(start + len) * c].to_vec())
    };
    Ok((
        Utterance {
            mel: rows(&utt.mel)?,
            lf0: utt.lf0[start..start + len].to_vec(),
            energy: utt.energy[start..start + len].to_vec(),
            content: utt.content[first..first + tokens].to_vec(),
            speaker_id: utt.speaker_id,
            style_class: utt.style_class,
        },
        ContentFeatures::new(rows(feats.tensor())?)?,
    ))
}

/// Output of base training.
#[derive(Clone, Debug)]
pub struct BaseModel {
    pub vc: VcModel,
    pub disc: Discriminator,
    pub config: TrainingConfig,
    pub adam: Adam,
    pub disc_adam: Adam,
    pub steps: usize,
}

const BASE_KIND: &str = "vc_base";
const ADAPTED_KIND: &str = "vc_adapted";

fn put_adam(c: &mut Checkpoint, prefix: &str, adam: &Adam) {
    let (m, v) = adam.moments();
    c.put_section(&format!("{prefix}.m."), m.iter());
    c.put_section(&format!("{prefix}.v."), v.iter());
}

fn get_adam(c: &Checkpoint, prefix: &str, meta: &serde_json::Value) -> Result<Adam> {
    let config: AdamConfig = serde_json::from_value(meta["config"].clone())?;
    let step: u64 = serde_json::from_value(meta["step"].clone())?;
    Ok(Adam::restore(
        config,
        step,
        c.section(&format!("{prefix}.m.")),
        c.section(&format!("{prefix}.v.")),
    ))
}

fn adam_meta(a: &Adam) -> serde_json::Value {
    serde_json::json!({ "config": a.config, "step": a.step })
}

impl BaseModel {
    pub fn to_checkpoint(&self, config_hash: &str, corpus_hash: &str) -> Checkpoint {
        let mut c = Checkpoint::new(BASE_KIND, config_hash);
        c.corpus_hash = Some(corpus_hash.to_string());
        c.meta = serde_json::json!({
            "training": self.config,
            "vc": self.vc.config,
            "steps": self.steps,
            "adam": adam_meta(&self.adam),
            "disc_adam": adam_meta(&self.disc_adam),
        });
        c.put_section("vc.", self.vc.params.iter());
        c.put_section("disc.", self.disc.params.iter());
        put_adam(&mut c, "adam", &self.adam);
        put_adam(&mut c, "disc_adam", &self.disc_adam);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.kind != BASE_KIND {
            return Err(Error::Checkpoint(format!(
                "expected {BASE_KIND} checkpoint, found {}",
                c.kind
            )));
        }
        let vc_cfg: VcConfig = serde_json::from_value(c.meta["vc"].clone())?;
        let mut vc = VcModel::new(vc_cfg)?;
        vc.params.load_from(&c.tensors, "vc.")?;
        let mut disc = Discriminator::new(0)?;
        disc.params.load_from(&c.tensors, "disc.")?;
        disc.freeze();
        Ok(Self {
            vc,
            disc,
            config: serde_json::from_value(c.meta["training"].clone())?,
            adam: get_adam(c, "adam", &c.meta["adam"])?,
            disc_adam: get_adam(c, "disc_adam", &c.meta["disc_adam"])?,
            steps: serde_json::from_value(c.meta["steps"].clone())?,
        })
    }
}

/// Trains the conversion model and the discriminator on the base speakers with
/// the reconstruction objective (`alpha` forced to 0).
pub fn train_base(
    corpus: &Corpus,
    aux: &Auxiliaries,
    cache: &ContentCache,
    cfg: &TrainingConfig,
    vc_cfg: &VcConfig,
    log: &mut dyn FnMut(LogRecord),
) -> Result<BaseModel> {
    let cfg = TrainingConfig {
        alpha: 0.0,
        ..cfg.clone()
    };
    cfg.validate()?;
    aux.require_frozen()?;
    let centroids = speaker_centroids(corpus, aux)?;
    let mut vc = VcModel::new(VcConfig {
        seed: derive_seed(cfg.seed, 20, 0),
        ..vc_cfg.clone()
    })?;
    let mut disc = Discriminator::new(derive_seed(cfg.seed, 20, 1))?;
    let mut adam = Adam::new(AdamConfig::default(), &vc.params);
    let mut disc_adam = Adam::new(AdamConfig::default(), &disc.params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 20, 2));
    let mut order = corpus.split_indices(Split::Train);
    if order.is_empty() {
        return Err(Error::Contract("corpus has no training utterances".into()));
    }
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let windows = chunk
                .iter()
                .map(|&i| window(&mut rng, &corpus.utterances[i], cache.get(i), cfg.crop_frames))
                .collect::<Result<Vec<_>>>()?;
            let items: Vec<ReconItem> = windows
                .iter()
                .enumerate()
                .map(|(j, (u, c))| ReconItem {
                    utt: u,
                    content: c,
                    speaker: &centroids[&u.speaker_id],
                    dropout_seed: Some(derive_seed(cfg.seed, 21, (step * cfg.batch_size + j) as u64)),
                })
                .collect();

            let mut g = Graph::new();
            let sess = Session::bind(&mut g, &vc, true, aux, &disc, None)?;
            let obj = loss_recon(&mut g, &sess, &items, &cfg)?;
            let fakes: Vec<Tensor> = obj.predictions.iter().map(|&p| g.value(p).clone()).collect();
            let mut grads = g.backward(obj.total)?;
            let grads = sess.vc_b.collect(&g, &mut grads);
            check_finite(&obj.breakdown.total_recon)?;
            log(LogRecord {
                step,
                epoch,
                mode: Mode::Recon,
                lr,
                breakdown: obj.breakdown,
            });
            adam.update(&mut vc.params, &grads, lr)?;

            if step % cfg.disc_update_every == 0 {
                let real_fake = disc_step(&mut disc, &mut disc_adam, &items, &fakes, &cfg, lr)?;
                log(LogRecord {
                    step,
                    epoch,
                    mode: Mode::Disc,
                    lr,
                    breakdown: LossBreakdown {
                        real_fake: Some(real_fake),
                        ..LossBreakdown::default()
                    },
                });
            }
            step += 1;
        }
    }
    disc.freeze();
    Ok(BaseModel {
        vc,
        disc,
        config: cfg,
        adam,
        disc_adam,
        steps: step,
    })
}

fn check_finite(v: &Option<f64>) -> Result<()> {
    match v {
        Some(x) if !x.is_finite() => Err(Error::Degenerate("training loss diverged".into())),
        _ => Ok(()),
    }
}

/// One discriminator update on real mels against detached predictions.
fn disc_step(
    disc: &mut Discriminator,
    adam: &mut Adam,
    items: &[ReconItem],
    fakes: &[Tensor],
    cfg: &TrainingConfig,
    lr: f64,
) -> Result<f64> {
    disc.require_trainable()?;
    let mut g = Graph::new();
    let b = disc.bind(&mut g);
    let mut acc = None;
    for (it, fake) in items.iter().zip(fakes) {
        let y = g.constant(it.utt.mel.clone());
        let f = g.constant(fake.clone());
        let dy = disc.score_in(&mut g, &b, y)?;
        let df = disc.score_in(&mut g, &b, f)?;
        let l = loss_real_fake(&mut g, dy, df, cfg.fake_term)?;
        acc = Some(match acc {
            Some(a) => g.add(a, l)?,
            None => l,
        });
    }
    let total = acc.ok_or_else(|| Error::Contract("empty discriminator batch".into()))?;
    let total = g.scale(total, 1.0 / items.len() as f64);
    let value = g.item(total);
    let mut grads = g.backward(total)?;
    let grads = b.collect(&g, &mut grads);
    adam.update(&mut disc.params, &grads, lr)?;
    Ok(value)
}

/// Conversion model adapted to one target speaker.
#[derive(Clone, Debug)]
pub struct AdaptedModel {
    pub vc: VcModel,
    pub target: u32,
    pub adapt_utts: usize,
    /// Indicator centroid over the adaptation utterances.
    pub speaker: SpeakerEmbedding,
    pub config: TrainingConfig,
    pub adam: Adam,
    pub steps: usize,
}

impl AdaptedModel {
    pub fn to_checkpoint(&self, config_hash: &str, base_hash: &str) -> Checkpoint {
        let mut c = Checkpoint::new(ADAPTED_KIND, config_hash);
        c.parent_hash = Some(base_hash.to_string());
        c.meta = serde_json::json!({
            "training": self.config,
            "vc": self.vc.config,
            "target": self.target,
            "adapt_utts": self.adapt_utts,
            "speaker": self.speaker,
            "steps": self.steps,
            "adam": adam_meta(&self.adam),
        });
        c.put_section("vc.", self.vc.params.iter());
        put_adam(&mut c, "adam", &self.adam);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.kind != ADAPTED_KIND {
            return Err(Error::Checkpoint(format!(
                "expected {ADAPTED_KIND} checkpoint, found {}",
                c.kind
            )));
        }
        if c.parent_hash.is_none() {
            return Err(Error::Checkpoint("adapted checkpoint has no base reference".into()));
        }
        let vc_cfg: VcConfig = serde_json::from_value(c.meta["vc"].clone())?;
        let mut vc = VcModel::new(vc_cfg)?;
        vc.params.load_from(&c.tensors, "vc.")?;
        Ok(Self {
            vc,
            target: serde_json::from_value(c.meta["target"].clone())?,
            adapt_utts: serde_json::from_value(c.meta["adapt_utts"].clone())?,
            speaker: serde_json::from_value(c.meta["speaker"].clone())?,
            config: serde_json::from_value(c.meta["training"].clone())?,
            adam: get_adam(c, "adam", &c.meta["adam"])?,
            steps: serde_json::from_value(c.meta["steps"].clone())?,
        })
    }
}

/// Adapts the base model to an unseen target speaker from `adapt_utts` of its
/// utterances (`alpha` forced to 1). The discriminator and auxiliaries stay frozen.
#[allow(clippy::too_many_arguments)]
pub fn adapt(
    base: &BaseModel,
    aux: &Auxiliaries,
    corpus: &Corpus,
    cache: &ContentCache,
    target: u32,
    adapt_utts: usize,
    cfg: &TrainingConfig,
    log: &mut dyn FnMut(LogRecord),
) -> Result<AdaptedModel> {
    let cfg = TrainingConfig {
        alpha: 1.0,
        ..cfg.clone()
    };
    cfg.validate()?;
    aux.require_frozen()?;
    base.disc.require_frozen()?;
    if corpus.is_base_speaker(target) {
        return Err(Error::Contract(format!(
            "speaker {target} was seen in base training and cannot be an adaptation target"
        )));
    }
    let own = corpus.adaptation_indices(target, adapt_utts)?;
    let own_utts: Vec<&Utterance> = own.iter().map(|&i| &corpus.utterances[i]).collect();
    let speaker = aux.centroid(&own_utts)?;
    let pool: Vec<usize> = corpus
        .split_indices(Split::Train)
        .into_iter()
        .filter(|&i| corpus.utterances[i].speaker_id != target)
        .collect();
    if cfg.simu_batch > 0 && pool.is_empty() {
        return Err(Error::Contract("no simulation sources available".into()));
    }

    let anchor = base.vc.params.clone();
    let mut vc = base.vc.clone();
    let mut adam = Adam::new(AdamConfig::default(), &vc.params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 30, target as u64));
    for step in 0..cfg.epochs {
        let lr = cfg.lr(step);
        let run_recon = !cfg.alternate_modes || cfg.simu_batch == 0 || step % 2 == 0;
        let run_simu = cfg.simu_batch > 0 && (!cfg.alternate_modes || step % 2 == 1);

        let recon_items: Vec<ReconItem> = own
            .iter()
            .enumerate()
            .map(|(j, &i)| ReconItem {
                utt: &corpus.utterances[i],
                content: cache.get(i),
                speaker: &speaker,
                dropout_seed: Some(derive_seed(cfg.seed, 31, (step * own.len() + j) as u64)),
            })
            .collect();
        let sources = if run_simu {
            (0..cfg.simu_batch)
                .map(|_| {
                    let i = pool[rng.random_range(0..pool.len())];
                    window(&mut rng, &corpus.utterances[i], cache.get(i), cfg.crop_frames)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let simu_items: Vec<SimuItem> = sources
            .iter()
            .map(|(u, c)| SimuItem {
                source: u,
                content: c,
                target_id: target,
                target: &speaker,
            })
            .collect();

        let mut g = Graph::new();
        let sess = Session::bind(&mut g, &vc, true, aux, &base.disc, Some(&anchor))?;
        let mut total = None;
        let mut records = Vec::new();
        if run_recon {
            let obj = loss_recon(&mut g, &sess, &recon_items, &cfg)?;
            check_finite(&obj.breakdown.total_recon)?;
            total = Some(obj.total);
            records.push((Mode::Recon, obj.breakdown));
        }
        if run_simu {
            let obj = loss_simu(&mut g, &sess, &simu_items, &cfg)?;
            check_finite(&obj.breakdown.total_simu)?;
            total = Some(match total {
                Some(t) => g.add(t, obj.total)?,
                None => obj.total,
            });
            records.push((Mode::Simu, obj.breakdown));
        }
        let total = total.ok_or_else(|| Error::Contract("adaptation step has no objective".into()))?;
        let mut grads = g.backward(total)?;
        let grads = sess.vc_b.collect(&g, &mut grads);
        for (mode, breakdown) in records {
            log(LogRecord {
                step,
                epoch: step,
                mode,
                lr,
                breakdown,
            });
        }
        adam.update(&mut vc.params, &grads, lr)?;
    }
    Ok(AdaptedModel {
        vc,
        target,
        adapt_utts,
        speaker,
        steps: cfg.epochs,
        config: cfg,
        adam,
    })
}
