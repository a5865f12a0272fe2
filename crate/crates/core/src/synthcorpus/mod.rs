//! Seeded synthetic corpus with independent speaker, content and style factors.
//!
//! Every mel frame is the sum of three masked components plus Gaussian noise:
//! bin 0 carries the lf0 contour, bins 1..8 carry a per-token content template and
//! bins 8..16 carry a constant per-speaker timbre offset. The networks trained on
//! the corpus never see these masks; evaluation uses them as exact oracles.

mod corpus;
mod format;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

pub use corpus::{
    build_corpus, corpus_hash, generate_corpus, Corpus, CorpusConfig, CorpusManifest, FileEntry,
    Split,
};
pub use format::{decode_utterance, encode_utterance, load_utterance, save_utterance};

/// Mel bins per frame.
pub const BINS: usize = 16;
/// Content vocabulary size.
pub const VOCAB: usize = 12;
pub const STYLE_CLASSES: usize = 4;
pub const FRAMES_PER_TOKEN: usize = 4;
pub const TIMBRE_DIM: usize = 8;
pub const LF0_BIN: usize = 0;
pub const CONTENT_BINS: std::ops::Range<usize> = 1..8;
pub const TIMBRE_BINS: std::ops::Range<usize> = 8..16;
pub const MIN_TOKENS: usize = 10;

/// Per-class contour level, base amplitude, base frequency (cycles per 100 frames)
/// and energy level.
const STYLE_TABLE: [(f64, f64, f64, f64); STYLE_CLASSES] = [
    (-0.6, 0.9, 3.0, 0.30),
    (-0.2, 1.2, 4.5, 0.60),
    (0.2, 1.05, 6.0, 0.45),
    (0.6, 1.35, 3.75, 0.75),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: u32,
    pub timbre: Vec<f64>,
}

/// Prosody parameters of one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub style_class: u16,
    pub contour_freq: f64,
    pub contour_amp: f64,
    pub contour_phase: f64,
}

impl StyleSpec {
    /// Class defaults scaled by `(1 + freq_jitter)` and `(1 + amp_jitter)`; both
    /// jitters must lie in `[-0.1, 0.1]`.
    pub fn new(style_class: u16, freq_jitter: f64, amp_jitter: f64, phase: f64) -> Result<Self> {
        if style_class as usize >= STYLE_CLASSES {
            return Err(Error::Contract(format!("style class {style_class} out of range")));
        }
        if freq_jitter.abs() > 0.1 || amp_jitter.abs() > 0.1 {
            return Err(Error::Contract("style jitter exceeds 10%".into()));
        }
        let (_, amp, freq, _) = STYLE_TABLE[style_class as usize];
        Ok(Self {
            style_class,
            contour_freq: freq * (1.0 + freq_jitter),
            contour_amp: amp * (1.0 + amp_jitter),
            contour_phase: phase,
        })
    }

    fn angle(&self, t: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.contour_freq * t as f64 / 100.0 + self.contour_phase
    }

    pub fn lf0(&self, t: usize) -> f64 {
        let (level, ..) = STYLE_TABLE[self.style_class as usize];
        level + self.contour_amp * self.angle(t).sin()
    }

    pub fn energy(&self, t: usize) -> f64 {
        let (.., level) = STYLE_TABLE[self.style_class as usize];
        level + 0.5 * self.contour_amp * self.angle(t).cos()
    }
}

/// One synthetic utterance: a `T x 16` mel matrix with its prosody contours and
/// ground-truth factors.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub mel: Tensor,
    pub lf0: Vec<f64>,
    pub energy: Vec<f64>,
    /// One token per [`FRAMES_PER_TOKEN`] frames.
    pub content: Vec<u16>,
    pub speaker_id: u32,
    pub style_class: u16,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.mel.rows()
    }

    pub fn token_at(&self, frame: usize) -> u16 {
        self.content[frame / FRAMES_PER_TOKEN]
    }

    /// Frame-level `[lf0, energy]` matrix.
    pub fn prosody(&self) -> Tensor {
        let data = self
            .lf0
            .iter()
            .zip(&self.energy)
            .flat_map(|(&a, &b)| [a, b])
            .collect();
        Tensor::matrix(self.frames(), 2, data).expect("aligned contours")
    }

    pub(crate) fn check(&self) -> Result<()> {
        let t = self.frames();
        let ok = self.mel.shape() == [t, BINS]
            && self.lf0.len() == t
            && self.energy.len() == t
            && self.content.len() == t.div_ceil(FRAMES_PER_TOKEN)
            && self.content.iter().all(|&c| (c as usize) < VOCAB)
            && (self.style_class as usize) < STYLE_CLASSES;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract("utterance fields are not frame-aligned".into()))
        }
    }
}

/// Renders the mel spectrum of (speaker, content, style) with seeded noise.
pub fn synthesize_mel(
    speaker: &SpeakerProfile,
    content: &[u16],
    style: &StyleSpec,
    templates: &[Vec<f64>],
    noise_sigma: f64,
    seed: u64,
) -> Result<Utterance> {
    if content.len() < MIN_TOKENS {
        return Err(Error::Contract(format!(
            "content has {} tokens, at least {MIN_TOKENS} required",
            content.len()
        )));
    }
    if speaker.timbre.len() != TIMBRE_DIM {
        return Err(Error::Contract("timbre dimension must be 8".into()));
    }
    if let Some(&bad) = content.iter().find(|&&c| c as usize >= templates.len()) {
        return Err(Error::Contract(format!("token {bad} outside vocabulary")));
    }
    let frames = content.len() * FRAMES_PER_TOKEN;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(0.0))
        .map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
    let lf0: Vec<f64> = (0..frames).map(|t| style.lf0(t)).collect();
    let energy: Vec<f64> = (0..frames).map(|t| style.energy(t)).collect();
    let mut mel = Vec::with_capacity(frames * BINS);
    for (t, &f0) in lf0.iter().enumerate() {
        let template = &templates[content[t / FRAMES_PER_TOKEN] as usize];
        for b in 0..BINS {
            let clean = if b == LF0_BIN {
                f0
            } else if CONTENT_BINS.contains(&b) {
                template[b - CONTENT_BINS.start]
            } else {
                speaker.timbre[b - TIMBRE_BINS.start]
            };
            let n = if noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            mel.push(clean + n);
        }
    }
    Ok(Utterance {
        mel: Tensor::matrix(frames, BINS, mel)?,
        lf0,
        energy,
        content: content.to_vec(),
        speaker_id: speaker.speaker_id,
        style_class: style.style_class,
    })
}

/// Stable per-stream seed derivation (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
