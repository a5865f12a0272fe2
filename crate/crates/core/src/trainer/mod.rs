//! Base training and low-resource adaptation.
//!
//! Base training uses only the reconstruction objective with `alpha = 0`: mel
//! error, speaker cross-entropy through the frozen classifier, content and
//! three-level style matching, and the adversarial term, alternating with
//! discriminator updates. Adaptation sets `alpha = 1`: the classifier is
//! replaced by the indicator's cosine loss and a weight penalty anchors the
//! parameters to the base snapshot. Each adaptation step also runs the
//! simulation objective on sources from other speakers, converted free-running
//! to the target with no ground-truth mel.

mod config;
mod objective;
mod run;

pub use config::{lr_at, AblationSwitches, TrainingConfig, Weights};
pub use objective::{
    loss_recon, loss_simu, loss_weight_reg, LossBreakdown, ReconItem, Session, SimuItem,
};
pub use run::{
    adapt, speaker_centroids, train_base, AdaptedModel, BaseModel, ContentCache, LogRecord, Mode,
};

#[cfg(test)]
mod tests;
