//! Frozen auxiliary networks and the constraint losses built on them.
//!
//! Every network owns a [`ParamSet`] and a frozen flag. Pretraining requires the
//! flag to be clear; every constraint loss requires it to be set. When frozen, a
//! network binds its parameters as graph constants, so gradients of a constraint
//! loss reach the predicted mel and nothing else.

mod losses;
mod models;
mod pretrain;

use serde::{Deserialize, Serialize};

use crate::params::{Bound, ParamSet};
use crate::{Error, Graph, Result, Tensor, Var};

pub use losses::{cosine, loss_adv, loss_real_fake, loss_spk_cos, loss_triplet, FakeTerm};
pub use models::{
    AsrStandin, ContentModel, Discriminator, Ser, SpeakerClassifier, SpeakerIndicator,
    CONTENT_DIM, EMBED_DIM, SER_HIDDEN,
};
pub use pretrain::{pretrain_auxiliaries, Auxiliaries, PretrainConfig, PretrainReport};

/// Indicator output for one utterance (or a centroid over several).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding(pub Vec<f64>);

impl SpeakerEmbedding {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self(t.data().to_vec())
    }

    /// `[1, dim]` row.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::row(self.0.clone())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Contract("embedding dimensions differ".into()));
        }
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Degenerate("cosine of a zero-norm embedding".into()));
        }
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        Ok(dot / (na * nb))
    }

    /// Mean of the unit-normalised embeddings.
    pub fn centroid(items: &[SpeakerEmbedding]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("centroid of no embeddings".into()))?;
        let mut acc = vec![0.0; first.dim()];
        for e in items {
            if e.dim() != acc.len() {
                return Err(Error::Contract("embedding dimensions differ".into()));
            }
            let n = e.norm();
            if n == 0.0 {
                return Err(Error::Degenerate("zero-norm embedding in centroid".into()));
            }
            for (a, x) in acc.iter_mut().zip(&e.0) {
                *a += x / n;
            }
        }
        let k = items.len() as f64;
        Ok(Self(acc.into_iter().map(|a| a / k).collect()))
    }
}

/// SER tap points for one mel.
#[derive(Clone, Copy, Debug)]
pub struct StyleFeatures {
    /// `[T, 16]`, first hidden layer.
    pub h_l: Var,
    /// `[ceil(T/4), 16]`, second hidden layer.
    pub h_m: Var,
    /// `[1, 16]`, pooled pre-logit vector.
    pub h_h: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleLevel {
    L,
    M,
    H,
}

impl StyleLevel {
    pub const ALL: [StyleLevel; 3] = [StyleLevel::L, StyleLevel::M, StyleLevel::H];

    pub fn pick(self, f: &StyleFeatures) -> Var {
        match self {
            StyleLevel::L => f.h_l,
            StyleLevel::M => f.h_m,
            StyleLevel::H => f.h_h,
        }
    }
}

/// Shared lifecycle behaviour of the auxiliary networks.
pub trait Auxiliary {
    const KIND: &'static str;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn is_frozen(&self) -> bool;
    fn set_frozen(&mut self, frozen: bool);

    fn freeze(&mut self) {
        self.set_frozen(true);
    }

    fn require_frozen(&self) -> Result<()> {
        if self.is_frozen() {
            Ok(())
        } else {
            Err(Error::Lifecycle(format!("{} is not pretrained", Self::KIND)))
        }
    }

    fn require_trainable(&self) -> Result<()> {
        if self.is_frozen() {
            Err(Error::Lifecycle(format!("{} is frozen and cannot be trained", Self::KIND)))
        } else {
            Ok(())
        }
    }

    /// Binds parameters as constants when frozen, as trainable leaves otherwise.
    fn bind(&self, g: &mut Graph) -> Bound {
        self.params().bind(g, !self.is_frozen())
    }
}
