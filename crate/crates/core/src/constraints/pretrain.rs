//! Pretraining of the auxiliary networks on the base-speaker training split.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::models::{AsrStandin, ContentModel, Ser, SpeakerClassifier, SpeakerIndicator};
use super::{loss_triplet, Auxiliary, SpeakerEmbedding};
use crate::checkpoint::Checkpoint;
use crate::optim::{Adam, AdamConfig};
use crate::params::Bound;
use crate::synthcorpus::{derive_seed, Corpus, Utterance, BINS, TIMBRE_BINS};
use crate::{Error, Graph, Result, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub batch: usize,
    pub asr_steps: usize,
    pub content_steps: usize,
    pub ser_steps: usize,
    pub classifier_steps: usize,
    pub indicator_steps: usize,
    /// Speakers per indicator batch; each contributes an anchor and a positive.
    pub indicator_speakers: usize,
    /// In-batch negatives per anchor.
    pub negatives: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            lr: 3e-3,
            batch: 8,
            asr_steps: 300,
            content_steps: 300,
            ser_steps: 400,
            classifier_steps: 300,
            indicator_steps: 300,
            indicator_speakers: 16,
            negatives: 15,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("pretraining needs batch > 0 and lr > 0".into()));
        }
        if self.negatives == 0 || self.negatives >= self.indicator_speakers {
            return Err(Error::Config(
                "negatives must lie in 1..indicator_speakers".into(),
            ));
        }
        Ok(())
    }
}

/// Final training losses of each auxiliary network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub asr_loss: f64,
    pub content_loss: f64,
    pub ser_loss: f64,
    pub classifier_loss: f64,
    pub indicator_loss: f64,
}

/// The five pretrained, frozen constraint networks.
#[derive(Clone, Debug)]
pub struct Auxiliaries {
    pub asr: AsrStandin,
    pub content: ContentModel,
    pub ser: Ser,
    pub indicator: SpeakerIndicator,
    pub classifier: SpeakerClassifier,
}

const KIND: &str = "auxiliaries";

impl Auxiliaries {
    pub fn require_frozen(&self) -> Result<()> {
        self.asr.require_frozen()?;
        self.content.require_frozen()?;
        self.ser.require_frozen()?;
        self.indicator.require_frozen()?;
        self.classifier.require_frozen()
    }

    /// Parameter digests keyed by network kind.
    pub fn digests(&self) -> Vec<(&'static str, String)> {
        vec![
            (AsrStandin::KIND, self.asr.params.digest()),
            (ContentModel::KIND, self.content.params.digest()),
            (Ser::KIND, self.ser.params.digest()),
            (SpeakerIndicator::KIND, self.indicator.params.digest()),
            (SpeakerClassifier::KIND, self.classifier.params.digest()),
        ]
    }

    pub fn to_checkpoint(&self, config_hash: &str, corpus_hash: &str) -> Result<Checkpoint> {
        self.require_frozen()?;
        let mut c = Checkpoint::new(KIND, config_hash);
        c.frozen = true;
        c.corpus_hash = Some(corpus_hash.to_string());
        c.meta = serde_json::json!({ "classes": self.classifier.classes() });
        c.put_section("asr.", self.asr.params.iter());
        c.put_section("content.", self.content.params.iter());
        c.put_section("ser.", self.ser.params.iter());
        c.put_section("indicator.", self.indicator.params.iter());
        c.put_section("classifier.", self.classifier.params.iter());
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.kind != KIND {
            return Err(Error::Checkpoint(format!("expected {KIND} checkpoint, found {}", c.kind)));
        }
        if !c.frozen {
            return Err(Error::Lifecycle("auxiliary checkpoint is not frozen".into()));
        }
        let classes: Vec<u32> = serde_json::from_value(c.meta["classes"].clone())?;
        let mut aux = Self {
            asr: AsrStandin::new(0)?,
            content: ContentModel::new(0)?,
            ser: Ser::new(0)?,
            indicator: SpeakerIndicator::new(0)?,
            classifier: SpeakerClassifier::new(classes, 0)?,
        };
        aux.asr.params.load_from(&c.tensors, "asr.")?;
        aux.content.params.load_from(&c.tensors, "content.")?;
        aux.ser.params.load_from(&c.tensors, "ser.")?;
        aux.indicator.params.load_from(&c.tensors, "indicator.")?;
        aux.classifier.params.load_from(&c.tensors, "classifier.")?;
        aux.freeze_all();
        Ok(aux)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    fn freeze_all(&mut self) {
        self.asr.freeze();
        self.content.freeze();
        self.ser.freeze();
        self.indicator.freeze();
        self.classifier.freeze();
    }

    /// Mean indicator embedding direction of a speaker's utterances.
    pub fn centroid(&self, utts: &[&Utterance]) -> Result<SpeakerEmbedding> {
        let embs = utts
            .iter()
            .map(|u| self.indicator.embed(&u.mel))
            .collect::<Result<Vec<_>>>()?;
        SpeakerEmbedding::centroid(&embs)
    }
}

/// Trains one network for `steps` Adam steps; returns the mean loss of the last
/// tenth of the run.
fn fit<M: Auxiliary>(
    model: &mut M,
    steps: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
    mut batch_loss: impl FnMut(&M, &mut Graph, &Bound, &mut ChaCha8Rng) -> Result<Var>,
) -> Result<f64> {
    model.require_trainable()?;
    let mut opt = Adam::new(AdamConfig::default(), model.params());
    let tail = (steps / 10).max(1);
    let mut tail_sum = 0.0;
    for step in 0..steps {
        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let loss = batch_loss(model, &mut g, &b, rng)?;
        let value = g.item(loss);
        if !value.is_finite() {
            return Err(Error::Degenerate(format!("{} loss diverged", M::KIND)));
        }
        if step + tail >= steps {
            tail_sum += value;
        }
        let mut grads = g.backward(loss)?;
        let grads = b.collect(&g, &mut grads);
        // Step decay: full rate for half the run, then halved twice.
        let rate = if step < steps / 2 {
            lr
        } else if step < 3 * steps / 4 {
            lr * 0.5
        } else {
            lr * 0.25
        };
        opt.update(model.params_mut(), &grads, rate)?;
    }
    Ok(if steps == 0 { 0.0 } else { tail_sum / tail.min(steps) as f64 })
}

fn swap_timbre(mel: &Tensor, from: &[f64], to: &[f64]) -> Result<Tensor> {
    let mut data = mel.data().to_vec();
    for row in data.chunks_mut(BINS) {
        for (k, b) in TIMBRE_BINS.enumerate() {
            row[b] += to[k] - from[k];
        }
    }
    Ok(Tensor::matrix(mel.rows(), BINS, data)?)
}

fn sample<'a>(rng: &mut ChaCha8Rng, pool: &[&'a Utterance], n: usize) -> Vec<&'a Utterance> {
    (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

fn mean_of(g: &mut Graph, terms: Vec<Var>) -> Result<Var> {
    let n = terms.len() as f64;
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, 1.0 / n))
}

/// Pretrains and freezes all auxiliary networks on the base-speaker training split.
pub fn pretrain_auxiliaries(
    corpus: &Corpus,
    cfg: &PretrainConfig,
) -> Result<(Auxiliaries, PretrainReport)> {
    cfg.validate()?;
    let train = corpus.train();
    if train.is_empty() {
        return Err(Error::Contract("corpus has no training utterances".into()));
    }
    let base = corpus.base_speaker_ids();
    if base.len() < cfg.indicator_speakers {
        return Err(Error::Config(format!(
            "indicator batches need {} speakers, corpus has {}",
            cfg.indicator_speakers,
            base.len()
        )));
    }
    let seed = |i| derive_seed(cfg.seed, 10, i);
    let mut report = PretrainReport::default();

    let mut asr = AsrStandin::new(seed(0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed(100));
    report.asr_loss = fit(&mut asr, cfg.asr_steps, cfg.lr, &mut rng, |m, g, b, rng| {
        let terms = sample(rng, &train, cfg.batch)
            .into_iter()
            .map(|u| {
                let x = g.constant(u.mel.clone());
                let (logits, _) = m.logits_in(g, b, x)?;
                let targets: Vec<usize> = (0..u.frames()).map(|t| u.token_at(t) as usize).collect();
                Ok(g.cross_entropy_rows(logits, &targets)?)
            })
            .collect::<Result<Vec<_>>>()?;
        mean_of(g, terms)
    })?;
    asr.freeze();

    let mut content = ContentModel::new(seed(1))?;
    let targets: Vec<_> = train
        .iter()
        .map(|u| asr.features(&u.mel))
        .collect::<Result<_>>()?;
    let timbres: Vec<&[f64]> = corpus
        .manifest
        .base_speakers
        .iter()
        .map(|s| s.timbre.as_slice())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed(101));
    report.content_loss = fit(&mut content, cfg.content_steps, cfg.lr, &mut rng, |m, g, b, rng| {
        let terms = (0..cfg.batch)
            .map(|_| {
                let i = rng.random_range(0..train.len());
                // half the batch hears the same words in another voice
                let mel = if rng.random_bool(0.5) {
                    let own = &corpus
                        .speaker(train[i].speaker_id)
                        .ok_or_else(|| Error::Contract("utterance of unknown speaker".into()))?
                        .timbre;
                    let other = timbres[rng.random_range(0..timbres.len())];
                    swap_timbre(&train[i].mel, own, other)?
                } else {
                    train[i].mel.clone()
                };
                let x = g.constant(mel);
                let y = g.constant(targets[i].clone());
                let c = m.forward(g, b, x)?;
                Ok(g.mse(c, y)?)
            })
            .collect::<Result<Vec<_>>>()?;
        mean_of(g, terms)
    })?;
    content.freeze();

    let mut ser = Ser::new(seed(2))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed(102));
    report.ser_loss = fit(&mut ser, cfg.ser_steps, cfg.lr, &mut rng, |m, g, b, rng| {
        let terms = sample(rng, &train, cfg.batch)
            .into_iter()
            .map(|u| {
                let x = g.constant(u.mel.clone());
                let f = m.features_in(g, b, x)?;
                let l = m.logits_in(g, b, &f)?;
                Ok(g.cross_entropy(l, u.style_class as usize)?)
            })
            .collect::<Result<Vec<_>>>()?;
        mean_of(g, terms)
    })?;
    ser.freeze();

    let mut classifier = SpeakerClassifier::new(base.clone(), seed(3))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed(103));
    report.classifier_loss =
        fit(&mut classifier, cfg.classifier_steps, cfg.lr, &mut rng, |m, g, b, rng| {
            let terms = sample(rng, &train, cfg.batch)
                .into_iter()
                .map(|u| {
                    let x = g.constant(u.mel.clone());
                    m.loss_spk_ce(g, b, x, u.speaker_id)
                })
                .collect::<Result<Vec<_>>>()?;
            mean_of(g, terms)
        })?;
    classifier.freeze();

    let by_speaker: Vec<Vec<&Utterance>> = base
        .iter()
        .map(|&s| train.iter().copied().filter(|u| u.speaker_id == s).collect())
        .collect();
    if by_speaker.iter().any(|v| v.len() < 2) {
        return Err(Error::Config("indicator training needs two utterances per speaker".into()));
    }
    let mut indicator = SpeakerIndicator::new(seed(4))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed(104));
    report.indicator_loss =
        fit(&mut indicator, cfg.indicator_steps, cfg.lr, &mut rng, |m, g, b, rng| {
            let mut speakers: Vec<usize> = (0..by_speaker.len()).collect();
            speakers.shuffle(rng);
            speakers.truncate(cfg.indicator_speakers);
            let mut anchors = Vec::with_capacity(speakers.len());
            let mut positives = Vec::with_capacity(speakers.len());
            for &s in &speakers {
                let pair: Vec<&&Utterance> = by_speaker[s].choose_multiple(rng, 2).collect();
                let a = g.constant(pair[0].mel.clone());
                let p = g.constant(pair[1].mel.clone());
                anchors.push(m.embed_in(g, b, a)?);
                positives.push(m.embed_in(g, b, p)?);
            }
            let mut terms = Vec::with_capacity(speakers.len());
            for i in 0..speakers.len() {
                let mut others: Vec<usize> = (0..speakers.len()).filter(|&j| j != i).collect();
                others.shuffle(rng);
                let negs: Vec<Var> = others[..cfg.negatives].iter().map(|&j| positives[j]).collect();
                terms.push(loss_triplet(g, anchors[i], positives[i], &negs)?);
            }
            mean_of(g, terms)
        })?;
    indicator.freeze();

    Ok((
        Auxiliaries {
            asr,
            content,
            ser,
            indicator,
            classifier,
        },
        report,
    ))
}
