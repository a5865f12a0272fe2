//! Architectures of the auxiliary networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Auxiliary, SpeakerEmbedding, StyleFeatures, StyleLevel};
use crate::params::{context3, Bound, ParamSet};
use crate::synthcorpus::{BINS, FRAMES_PER_TOKEN, STYLE_CLASSES, VOCAB};
use crate::{Error, Graph, Result, Tensor, Var};

/// Width of [`crate::vcmodel::ContentFeatures`] rows.
pub const CONTENT_DIM: usize = 12;
/// Speaker-indicator embedding width.
pub const EMBED_DIM: usize = 16;
pub const SER_HIDDEN: usize = 16;
const STRIDE: usize = 4;

macro_rules! auxiliary {
    ($ty:ident, $kind:literal) => {
        impl Auxiliary for $ty {
            const KIND: &'static str = $kind;

            fn params(&self) -> &ParamSet {
                &self.params
            }

            fn params_mut(&mut self) -> &mut ParamSet {
                &mut self.params
            }

            fn is_frozen(&self) -> bool {
                self.frozen
            }

            fn set_frozen(&mut self, frozen: bool) {
                self.frozen = frozen;
            }
        }
    };
}

fn check_mel(g: &Graph, mel: Var) -> Result<()> {
    let s = g.value(mel).shape();
    if s.len() == 2 && s[1] == BINS && s[0] > 0 {
        Ok(())
    } else {
        Err(Error::Contract(format!("expected a [T, {BINS}] mel, got {s:?}")))
    }
}

/// Runs `f` on a throwaway graph holding `mel` as a constant.
fn infer<R>(mel: &Tensor, f: impl FnOnce(&mut Graph, Var) -> Result<R>) -> Result<R> {
    let mut g = Graph::new();
    let x = g.constant(mel.clone());
    f(&mut g, x)
}

/// Frame-level token recogniser. Its 12-wide penultimate layer is the content
/// representation fed to the conversion model.
#[derive(Clone, Debug)]
pub struct AsrStandin {
    pub params: ParamSet,
    frozen: bool,
}
auxiliary!(AsrStandin, "asr");

impl AsrStandin {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.add_linear("l1", 3 * BINS, 32, &mut rng)?;
        p.add_linear("feat", 32, CONTENT_DIM, &mut rng)?;
        p.add_linear("head", CONTENT_DIM, VOCAB, &mut rng)?;
        Ok(Self { params: p, frozen: false })
    }

    pub fn features_in(&self, g: &mut Graph, b: &Bound, mel: Var) -> Result<Var> {
        check_mel(g, mel)?;
        let x = context3(g, mel)?;
        let h = b.linear(g, "l1", x)?;
        let h = g.tanh(h);
        let f = b.linear(g, "feat", h)?;
        Ok(g.tanh(f))
    }

    /// Per-frame token logits `[T, VOCAB]` and the features they were computed from.
    pub fn logits_in(&self, g: &mut Graph, b: &Bound, mel: Var) -> Result<(Var, Var)> {
        let f = self.features_in(g, b, mel)?;
        Ok((b.linear(g, "head", f)?, f))
    }

    /// `[T, 12]` content features of a mel.
    pub fn features(&self, mel: &Tensor) -> Result<Tensor> {
        self.require_frozen()?;
        infer(mel, |g, x| {
            let b = self.bind(g);
            let f = self.features_in(g, &b, x)?;
            Ok(g.value(f).clone())
        })
    }

    pub fn frame_tokens(&self, mel: &Tensor) -> Result<Vec<u16>> {
        self.require_frozen()?;
        infer(mel, |g, x| {
            let b = self.bind(g);
            let (l, _) = self.logits_in(g, &b, x)?;
            let l = g.value(l);
            Ok((0..l.rows()).map(|r| argmax(l.row_slice(r)) as u16).collect())
        })
    }

    /// One token per 4-frame group, from group-averaged logits.
    pub fn decode_tokens(&self, mel: &Tensor) -> Result<Vec<u16>> {
        self.require_frozen()?;
        infer(mel, |g, x| {
            let b = self.bind(g);
            let (l, _) = self.logits_in(g, &b, x)?;
            let l = g.value(l);
            let groups = l.rows().div_ceil(FRAMES_PER_TOKEN);
            Ok((0..groups)
                .map(|k| {
                    let rows = k * FRAMES_PER_TOKEN..((k + 1) * FRAMES_PER_TOKEN).min(l.rows());
                    let mut acc = vec![0.0; VOCAB];
                    for r in rows {
                        for (a, v) in acc.iter_mut().zip(l.row_slice(r)) {
                            *a += v;
                        }
                    }
                    argmax(&acc) as u16
                })
                .collect())
        })
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Two-layer temporal regressor onto the recogniser's content features.
#[derive(Clone, Debug)]
pub struct ContentModel {
    pub params: ParamSet,
    frozen: bool,
}
auxiliary!(ContentModel, "content");

impl ContentModel {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.add_linear("l1", 3 * BINS, 32, &mut rng)?;
        p.add_linear("l2", 3 * 32, CONTENT_DIM, &mut rng)?;
        Ok(Self { params: p, frozen: false })
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, mel: Var) -> Result<Var> {
        check_mel(g, mel)?;
        let x = context3(g, mel)?;
        let h = b.linear(g, "l1", x)?;
        let h = g.tanh(h);
        let h = context3(g, h)?;
        b.linear(g, "l2", h)
    }

    /// Mean squared distance between content features of `source` and `pred`.
    pub fn loss_content(&self, g: &mut Graph, b: &Bound, source: Var, pred: Var) -> Result<Var> {
        self.require_frozen()?;
        let c = self.forward(g, b, source)?;
        let c_hat = self.forward(g, b, pred)?;
        Ok(g.mse(c, c_hat)?)
    }

    pub fn content_distance(&self, source: &Tensor, pred: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let s = g.constant(source.clone());
        let p = g.constant(pred.clone());
        let b = self.bind(&mut g);
        let l = self.loss_content(&mut g, &b, s, p)?;
        Ok(g.item(l))
    }
}

/// Style recogniser over the four style classes, tapped at three depths.
#[derive(Clone, Debug)]
pub struct Ser {
    pub params: ParamSet,
    frozen: bool,
}
auxiliary!(Ser, "ser");

impl Ser {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.add_linear("l1", 3 * BINS, SER_HIDDEN, &mut rng)?;
        p.add_linear("l2", 3 * SER_HIDDEN, SER_HIDDEN, &mut rng)?;
        p.add_linear("l3", SER_HIDDEN, SER_HIDDEN, &mut rng)?;
        p.add_linear("head", SER_HIDDEN, STYLE_CLASSES, &mut rng)?;
        Ok(Self { params: p, frozen: false })
    }

    pub fn features_in(&self, g: &mut Graph, b: &Bound, mel: Var) -> Result<StyleFeatures> {
        check_mel(g, mel)?;
        let x = context3(g, mel)?;
        let h_l = b.linear(g, "l1", x)?;
        let h_l = g.tanh(h_l);
        let d = g.downsample(h_l, STRIDE)?;
        let d = context3(g, d)?;
        let h_m = b.linear(g, "l2", d)?;
        let h_m = g.tanh(h_m);
        let h = b.linear(g, "l3", h_m)?;
        let h = g.tanh(h);
        let h_h = g.mean_time(h)?;
        Ok(StyleFeatures { h_l, h_m, h_h })
    }

    pub fn logits_in(&self, g: &mut Graph, b: &Bound, f: &StyleFeatures) -> Result<Var> {
        b.linear(g, "head", f.h_h)
    }

    /// Sum over `levels` of the mean squared feature distance.
    pub fn loss_style(
        &self,
        g: &mut Graph,
        b: &Bound,
        source: Var,
        pred: Var,
        levels: &[StyleLevel],
    ) -> Result<Vec<Var>> {
        self.require_frozen()?;
        if levels.is_empty() {
            return Err(Error::Contract("style loss needs at least one level".into()));
        }
        let fs = self.features_in(g, b, source)?;
        let fp = self.features_in(g, b, pred)?;
        levels
            .iter()
            .map(|l| Ok(g.mse(l.pick(&fs), l.pick(&fp))?))
            .collect()
    }

    /// Per-level style distances between two mels.
    pub fn style_distance(
        &self,
        source: &Tensor,
        pred: &Tensor,
        levels: &[StyleLevel],
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let s = g.constant(source.clone());
        let p = g.constant(pred.clone());
        let b = self.bind(&mut g);
        let ls = self.loss_style(&mut g, &b, s, p, levels)?;
        Ok(ls.into_iter().map(|l| g.item(l)).collect())
    }

    pub fn predict_class(&self, mel: &Tensor) -> Result<u16> {
        self.require_frozen()?;
        infer(mel, |g, x| {
            let b = self.bind(g);
            let f = self.features_in(g, &b, x)?;
            let l = self.logits_in(g, &b, &f)?;
            Ok(argmax(g.value(l).data()) as u16)
        })
    }
}

/// Contrastively trained speaker encoder.
#[derive(Clone, Debug)]
pub struct SpeakerIndicator {
    pub params: ParamSet,
    frozen: bool,
}
auxiliary!(SpeakerIndicator, "indicator");

impl SpeakerIndicator {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.add_linear("l1", BINS, 32, &mut rng)?;
        p.add_linear("l2", 3 * 32, 32, &mut rng)?;
        p.add_linear("out", 32, EMBED_DIM, &mut rng)?;
        Ok(Self { params: p, frozen: false })
    }

    /// `[1, 16]` embedding.
    pub fn embed_in(&self, g: &mut Graph, b: &Bound, mel: Var) -> Result<Var> {
        check_mel(g, mel)?;
        let h = b.linear(g, "l1", mel)?;
        let h = g.tanh(h);
        let h = g.downsample(h, STRIDE)?;
        let h = context3(g, h)?;
        let h = b.linear(g, "l2", h)?;
        let h = g.tanh(h);
        let h = g.mean_time(h)?;
        b.linear(g, "out", h)
    }

    pub fn embed(&self, mel: &Tensor) -> Result<SpeakerEmbedding> {
        infer(mel, |g, x| {
            let b = self.bind(g);
            let e = self.embed_in(g, &b, x)?;
            Ok(SpeakerEmbedding::from_tensor(g.value(e)))
        })
    }
}

/// Closed-set classifier over the base speakers.
#[derive(Clone, Debug)]
pub struct SpeakerClassifier {
    pub params: ParamSet,
    frozen: bool,
    classes: Vec<u32>,
}
auxiliary!(SpeakerClassifier, "classifier");

impl SpeakerClassifier {
    pub fn new(classes: Vec<u32>, seed: u64) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Contract("classifier needs at least one speaker".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.add_linear("l1", BINS, 32, &mut rng)?;
        p.add_linear("emb", 32, 32, &mut rng)?;
        p.add_linear("head", 32, classes.len(), &mut rng)?;
        Ok(Self {
            params: p,
            frozen: false,
            classes,
        })
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    /// Class index of a base speaker; any other id is a contract violation.
    pub fn class_of(&self, speaker_id: u32) -> Result<usize> {
        self.classes
            .iter()
            .position(|&c| c == speaker_id)
            .ok_or_else(|| {
                Error::Contract(format!(
                    "speaker {speaker_id} is not a base speaker of the classifier"
                ))
            })
    }

    /// `[1, 32]` penultimate embedding and `[1, n]` logits.
    pub fn forward(&self, g: &mut Graph, b: &Bound, mel: Var) -> Result<(Var, Var)> {
        check_mel(g, mel)?;
        let h = b.linear(g, "l1", mel)?;
        let h = g.relu(h);
        let h = g.mean_time(h)?;
        let e = b.linear(g, "emb", h)?;
        let e = g.relu(e);
        Ok((e, b.linear(g, "head", e)?))
    }

    /// `-log p[speaker_id]`.
    pub fn loss_spk_ce(&self, g: &mut Graph, b: &Bound, mel: Var, speaker_id: u32) -> Result<Var> {
        let class = self.class_of(speaker_id)?;
        let (_, logits) = self.forward(g, b, mel)?;
        Ok(g.cross_entropy(logits, class)?)
    }

    pub fn probabilities(&self, mel: &Tensor) -> Result<Vec<f64>> {
        infer(mel, |g, x| {
            let b = self.bind(g);
            let (_, l) = self.forward(g, &b, x)?;
            let p = g.softmax(l);
            Ok(g.value(p).data().to_vec())
        })
    }

    pub fn embedding(&self, mel: &Tensor) -> Result<SpeakerEmbedding> {
        infer(mel, |g, x| {
            let b = self.bind(g);
            let (e, _) = self.forward(g, &b, x)?;
            Ok(SpeakerEmbedding::from_tensor(g.value(e)))
        })
    }

    pub fn predict(&self, mel: &Tensor) -> Result<u32> {
        let p = self.probabilities(mel)?;
        Ok(self.classes[argmax(&p)])
    }
}

/// Real/fake critic with a single score per utterance.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub params: ParamSet,
    frozen: bool,
}
auxiliary!(Discriminator, "discriminator");

impl Discriminator {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.add_linear("l1", 3 * BINS, 32, &mut rng)?;
        p.add_linear("out", 32, 1, &mut rng)?;
        Ok(Self { params: p, frozen: false })
    }

    /// Scalar score: mean of the per-frame outputs.
    pub fn score_in(&self, g: &mut Graph, b: &Bound, mel: Var) -> Result<Var> {
        check_mel(g, mel)?;
        let x = context3(g, mel)?;
        let h = b.linear(g, "l1", x)?;
        let h = g.tanh(h);
        let s = b.linear(g, "out", h)?;
        Ok(g.mean(s))
    }

    pub fn score(&self, mel: &Tensor) -> Result<f64> {
        infer(mel, |g, x| {
            let b = self.bind(g);
            let s = self.score_in(g, &b, x)?;
            Ok(g.item(s))
        })
    }
}
