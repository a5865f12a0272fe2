//! The conversion network: style module, encoder and autoregressive mel decoder.
//!
//! The encoder is a small residual stack (temporal mixing over a 3-frame context,
//! then a per-frame feed-forward layer) standing in for a conformer. The decoder
//! adds a prenet-filtered projection of the previous mel frame to a
//! non-recurrent base prediction. In teacher-forced mode the previous frame is
//! the ground truth; in free-running mode it is the decoder's own output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{SpeakerEmbedding, CONTENT_DIM, EMBED_DIM};
use crate::params::{context3, Bound, ParamSet};
use crate::synthcorpus::{Utterance, BINS};
use crate::{Error, Graph, Result, Tensor, Var};

pub const STYLE_DIM: usize = 8;
pub const FRAME_STYLE_DIM: usize = 2;
pub const LOCAL_STRIDE: usize = 4;

/// Frame-aligned `[T, 12]` content representation.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentFeatures(Tensor);

impl ContentFeatures {
    pub fn new(t: Tensor) -> Result<Self> {
        if !t.is_matrix() || t.cols() != CONTENT_DIM || t.rows() == 0 {
            return Err(Error::Contract(format!(
                "content features must be [T, {CONTENT_DIM}], got {:?}",
                t.shape()
            )));
        }
        if !t.is_finite() {
            return Err(Error::Contract("content features are not finite".into()));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }
}

/// Style representations as tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleRepresentations {
    /// `[1, 8]`
    pub global: Tensor,
    /// `[ceil(T/4), 8]`
    pub local: Tensor,
    /// `[T, 2]`: lf0 and energy.
    pub frame: Tensor,
}

/// Style representations inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct StyleVars {
    pub global: Var,
    pub local: Var,
    pub frame: Var,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VcConfig {
    pub hidden: usize,
    pub prenet: usize,
    pub blocks: usize,
    pub autoregressive: bool,
    /// Drop probability of prenet units under [`Decode::TeacherForcedDropout`].
    pub prenet_dropout: f64,
    pub seed: u64,
}

impl Default for VcConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            prenet: 8,
            blocks: 2,
            autoregressive: true,
            prenet_dropout: 0.5,
            seed: 11,
        }
    }
}

/// Decoder feedback mode.
#[derive(Clone, Copy, Debug)]
pub enum Decode {
    /// Previous frame taken from this `[T, 16]` ground-truth mel.
    TeacherForced(Var),
    /// Teacher-forced with seeded inverted dropout on the prenet activations, so
    /// training cannot lean on copying the previous frame.
    TeacherForcedDropout(Var, u64),
    FreeRunning,
}

#[derive(Clone, Debug)]
pub struct VcModel {
    pub config: VcConfig,
    pub params: ParamSet,
}

/// Frame-level style input `[T, 2]` from given contours.
pub fn frame_style(lf0: &[f64], energy: &[f64]) -> Result<Tensor> {
    if lf0.len() != energy.len() || lf0.is_empty() {
        return Err(Error::Contract(format!(
            "lf0 has {} frames, energy has {}",
            lf0.len(),
            energy.len()
        )));
    }
    let data = lf0.iter().zip(energy).flat_map(|(&a, &b)| [a, b]).collect();
    Ok(Tensor::matrix(lf0.len(), FRAME_STYLE_DIM, data)?)
}

impl VcModel {
    pub fn new(config: VcConfig) -> Result<Self> {
        if config.hidden == 0 || config.prenet == 0 {
            return Err(Error::Config("vc widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.prenet_dropout) {
            return Err(Error::Config("prenet_dropout must lie in [0, 1)".into()));
        }
        let h = config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamSet::new();
        p.add_linear("style.frame", CONTENT_DIM + FRAME_STYLE_DIM, STYLE_DIM, &mut rng)?;
        p.add_linear("style.local", STYLE_DIM, STYLE_DIM, &mut rng)?;
        p.add_linear("style.global", STYLE_DIM, STYLE_DIM, &mut rng)?;
        p.add_linear("enc.in", CONTENT_DIM + STYLE_DIM, h, &mut rng)?;
        p.add_matrix("enc.spk.w", EMBED_DIM, h, &mut rng)?;
        for i in 0..config.blocks {
            p.add_linear(&format!("enc.block{i}.mix"), 3 * h, h, &mut rng)?;
            p.add_linear(&format!("enc.block{i}.ff"), h, h, &mut rng)?;
        }
        p.add_linear("dec.in", h + FRAME_STYLE_DIM, h, &mut rng)?;
        p.add_matrix("dec.spk.w", EMBED_DIM, h, &mut rng)?;
        p.add_matrix("dec.global.w", STYLE_DIM, h, &mut rng)?;
        p.add_linear("dec.out", h, BINS, &mut rng)?;
        if config.autoregressive {
            p.add_linear("dec.prenet", BINS, config.prenet, &mut rng)?;
            p.add_matrix("dec.ar.w", config.prenet, BINS, &mut rng)?;
        }
        Ok(Self { config, params: p })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    pub fn extract_styles_in(
        &self,
        g: &mut Graph,
        b: &Bound,
        content: Var,
        frame: Var,
    ) -> Result<StyleVars> {
        let (cs, fs) = (g.value(content).shape(), g.value(frame).shape());
        if cs.len() != 2 || fs.len() != 2 || cs[0] != fs[0] || fs[1] != FRAME_STYLE_DIM {
            return Err(Error::Contract(format!(
                "content {cs:?} and frame style {fs:?} are not aligned"
            )));
        }
        let x = g.concat_cols(&[content, frame])?;
        let f = b.linear(g, "style.frame", x)?;
        let f = g.tanh(f);
        let d = g.downsample(f, LOCAL_STRIDE)?;
        let local = b.linear(g, "style.local", d)?;
        let local = g.tanh(local);
        let pooled = g.mean_time(local)?;
        let global = b.linear(g, "style.global", pooled)?;
        let global = g.tanh(global);
        Ok(StyleVars { global, local, frame })
    }

    pub fn extract_styles(
        &self,
        content: &ContentFeatures,
        lf0: &[f64],
        energy: &[f64],
    ) -> Result<StyleRepresentations> {
        let frame = frame_style(lf0, energy)?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let c = g.constant(content.tensor().clone());
        let f = g.constant(frame);
        let s = self.extract_styles_in(&mut g, &b, c, f)?;
        Ok(StyleRepresentations {
            global: g.value(s.global).clone(),
            local: g.value(s.local).clone(),
            frame: g.value(s.frame).clone(),
        })
    }

    /// Predicted `[T, 16]` mel.
    pub fn convert_in(
        &self,
        g: &mut Graph,
        b: &Bound,
        content: Var,
        speaker: Var,
        styles: &StyleVars,
        mode: Decode,
    ) -> Result<Var> {
        let t = g.value(content).rows();
        if g.value(speaker).shape() != [1, EMBED_DIM] {
            return Err(Error::Contract(format!(
                "speaker vector must be [1, {EMBED_DIM}], got {:?}",
                g.value(speaker).shape()
            )));
        }
        if g.value(styles.frame).rows() != t || g.value(content).cols() != CONTENT_DIM {
            return Err(Error::Contract("content and styles are not aligned".into()));
        }
        if let Decode::TeacherForced(m) | Decode::TeacherForcedDropout(m, _) = mode {
            if g.value(m).shape() != [t, BINS] {
                return Err(Error::Contract("teacher mel does not match content length".into()));
            }
        }

        let local = g.upsample(styles.local, LOCAL_STRIDE, t)?;
        let x = g.concat_cols(&[content, local])?;
        let h = b.linear(g, "enc.in", x)?;
        let spk_e = g.matmul(speaker, b.var("enc.spk.w"))?;
        let h = g.add_row(h, spk_e)?;
        let mut h = g.tanh(h);
        for i in 0..self.config.blocks {
            let c = context3(g, h)?;
            let m = b.linear(g, &format!("enc.block{i}.mix"), c)?;
            let m = g.tanh(m);
            h = g.add(h, m)?;
            let f = b.linear(g, &format!("enc.block{i}.ff"), h)?;
            let f = g.tanh(f);
            h = g.add(h, f)?;
        }

        let x = g.concat_cols(&[h, styles.frame])?;
        let d = b.linear(g, "dec.in", x)?;
        let spk_d = g.matmul(speaker, b.var("dec.spk.w"))?;
        let d = g.add_row(d, spk_d)?;
        let glob = g.matmul(styles.global, b.var("dec.global.w"))?;
        let d = g.add_row(d, glob)?;
        let d = g.tanh(d);
        let base = b.linear(g, "dec.out", d)?;
        if !self.config.autoregressive {
            return Ok(base);
        }
        match mode {
            Decode::TeacherForced(mel) => {
                let prev = g.shift_rows(mel, 1)?;
                let fb = self.feedback(g, b, prev, None)?;
                Ok(g.add(base, fb)?)
            }
            Decode::TeacherForcedDropout(mel, seed) => {
                let prev = g.shift_rows(mel, 1)?;
                let fb = self.feedback(g, b, prev, Some(seed))?;
                Ok(g.add(base, fb)?)
            }
            Decode::FreeRunning => {
                let mut prev = g.constant(Tensor::zeros(&[1, BINS]));
                let mut rows = Vec::with_capacity(t);
                for r in 0..t {
                    let fb = self.feedback(g, b, prev, None)?;
                    let br = g.row(base, r)?;
                    let out = g.add(br, fb)?;
                    rows.push(out);
                    prev = out;
                }
                Ok(g.stack_rows(&rows)?)
            }
        }
    }

    fn feedback(&self, g: &mut Graph, b: &Bound, prev: Var, dropout: Option<u64>) -> Result<Var> {
        let p = b.linear(g, "dec.prenet", prev)?;
        let mut p = g.tanh(p);
        if let Some(seed) = dropout {
            let rate = self.config.prenet_dropout;
            if rate > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let shape = g.value(p).shape().to_vec();
                let keep = 1.0 / (1.0 - rate);
                let n = shape.iter().product();
                let mask = (0..n)
                    .map(|_| if rng.random_bool(rate) { 0.0 } else { keep })
                    .collect();
                let m = g.constant(Tensor::new(shape, mask)?);
                p = g.mul(p, m)?;
            }
        }
        Ok(g.matmul(p, b.var("dec.ar.w"))?)
    }

    /// Tensor-level conversion (no gradients).
    pub fn convert(
        &self,
        content: &ContentFeatures,
        speaker: &SpeakerEmbedding,
        styles: &StyleRepresentations,
        teacher: Option<&Tensor>,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let c = g.constant(content.tensor().clone());
        let s = g.constant(speaker.to_tensor());
        let sv = StyleVars {
            global: g.constant(styles.global.clone()),
            local: g.constant(styles.local.clone()),
            frame: g.constant(styles.frame.clone()),
        };
        let mode = match teacher {
            Some(m) => Decode::TeacherForced(g.constant(m.clone())),
            None => Decode::FreeRunning,
        };
        let y = self.convert_in(&mut g, &b, c, s, &sv, mode)?;
        Ok(g.value(y).clone())
    }

    /// Converts `source` to `speaker`, keeping its content and prosody. `content` is
    /// the recogniser output for the source mel.
    pub fn convert_utterance(
        &self,
        source: &Utterance,
        content: &ContentFeatures,
        speaker: &SpeakerEmbedding,
    ) -> Result<Tensor> {
        let styles = self.extract_styles(content, &source.lf0, &source.energy)?;
        self.convert(content, speaker, &styles, None)
    }
}

#[cfg(test)]
mod tests;
