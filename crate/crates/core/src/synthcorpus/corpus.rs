use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::format::{decode_utterance, encode_utterance};
use super::{
    derive_seed, synthesize_mel, SpeakerProfile, StyleSpec, Utterance, BINS, CONTENT_BINS,
    MIN_TOKENS, STYLE_CLASSES, TIMBRE_DIM, VOCAB,
};
use crate::checkpoint::sha256_hex;
use crate::{Error, Result};

const MAX_SPEAKER_ATTEMPTS: usize = 10_000;
const MIN_TEMPLATE_DISTANCE: f64 = 1.0;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub base_speakers: usize,
    pub target_speakers: usize,
    pub utts_per_base: usize,
    /// Adaptation utterances per target; the 1-utterance set is the first of these.
    pub adapt_utts: usize,
    /// Held-out utterances per target used for its reference centroid.
    pub target_eval_utts: usize,
    pub test_utts: usize,
    pub noise_sigma: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_speaker_distance: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            base_speakers: 20,
            target_speakers: 4,
            utts_per_base: 50,
            adapt_utts: 5,
            target_eval_utts: 10,
            test_utts: 40,
            noise_sigma: 0.02,
            min_tokens: 10,
            max_tokens: 30,
            min_speaker_distance: 0.5,
        }
    }
}

impl CorpusConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.base_speakers == 0 || self.utts_per_base == 0 {
            return bad("at least one base speaker with one utterance is required");
        }
        if self.target_speakers > 0 && self.adapt_utts == 0 {
            return bad("targets need at least one adaptation utterance");
        }
        if self.min_tokens < MIN_TOKENS || self.max_tokens < self.min_tokens {
            return bad("token range must satisfy 10 <= min_tokens <= max_tokens");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Adapt,
    TargetEval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub speaker_id: u32,
    pub style_class: u16,
    pub frames: usize,
    pub split: Split,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config: CorpusConfig,
    pub bins: usize,
    pub vocab: usize,
    pub base_speakers: Vec<SpeakerProfile>,
    pub target_speakers: Vec<SpeakerProfile>,
    pub content_templates: Vec<Vec<f64>>,
    pub files: Vec<FileEntry>,
}

impl CorpusManifest {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    /// Split-level invariants that do not need the utterance files.
    pub fn validate(&self) -> Result<()> {
        let base: BTreeSet<u32> = self.base_speakers.iter().map(|s| s.speaker_id).collect();
        let targets: BTreeSet<u32> = self.target_speakers.iter().map(|s| s.speaker_id).collect();
        if !base.is_disjoint(&targets) {
            return Err(Error::Manifest("base and target speaker ids overlap".into()));
        }
        let mut names = HashSet::new();
        for f in &self.files {
            if !names.insert(&f.name) {
                return Err(Error::Manifest(format!("file {} listed twice", f.name)));
            }
            let ok = match f.split {
                Split::Train | Split::Test => base.contains(&f.speaker_id),
                Split::Adapt | Split::TargetEval => targets.contains(&f.speaker_id),
            };
            if !ok {
                return Err(Error::Manifest(format!(
                    "file {} of speaker {} is in split {:?}",
                    f.name, f.speaker_id, f.split
                )));
            }
        }
        for t in &targets {
            let has = |split| {
                self.files
                    .iter()
                    .any(|f| f.speaker_id == *t && f.split == split)
            };
            if !has(Split::Adapt) {
                return Err(Error::Manifest(format!("target {t} has no adaptation data")));
            }
        }
        Ok(())
    }
}

/// Manifest plus decoded utterances, index-aligned with `manifest.files`.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub utterances: Vec<Utterance>,
    /// SHA-256 of the serialized manifest (which lists every file's hash).
    pub hash: String,
}

impl Corpus {
    fn in_split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.manifest
            .files
            .iter()
            .zip(&self.utterances)
            .filter(move |(f, _)| f.split == split)
            .map(|(_, u)| u)
    }

    pub fn train(&self) -> Vec<&Utterance> {
        self.in_split(Split::Train).collect()
    }

    pub fn test(&self) -> Vec<&Utterance> {
        self.in_split(Split::Test).collect()
    }

    pub fn base_speaker_ids(&self) -> Vec<u32> {
        self.manifest
            .base_speakers
            .iter()
            .map(|s| s.speaker_id)
            .collect()
    }

    pub fn target_speaker_ids(&self) -> Vec<u32> {
        self.manifest
            .target_speakers
            .iter()
            .map(|s| s.speaker_id)
            .collect()
    }

    pub fn is_base_speaker(&self, id: u32) -> bool {
        self.manifest.base_speakers.iter().any(|s| s.speaker_id == id)
    }

    /// Positions in [`Corpus::utterances`] of every utterance in `split`.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.manifest
            .files
            .iter()
            .enumerate()
            .filter(|(_, f)| f.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Positions of the first `n` adaptation utterances of a target speaker.
    pub fn adaptation_indices(&self, speaker: u32, n: usize) -> Result<Vec<usize>> {
        let set: Vec<usize> = self
            .split_indices(Split::Adapt)
            .into_iter()
            .filter(|&i| self.utterances[i].speaker_id == speaker)
            .take(n)
            .collect();
        if set.len() < n || n == 0 {
            return Err(Error::Contract(format!(
                "speaker {speaker} has {} adaptation utterances, {n} requested",
                set.len()
            )));
        }
        Ok(set)
    }

    /// First `n` adaptation utterances of a target speaker.
    pub fn adaptation_set(&self, speaker: u32, n: usize) -> Result<Vec<&Utterance>> {
        Ok(self
            .adaptation_indices(speaker, n)?
            .into_iter()
            .map(|i| &self.utterances[i])
            .collect())
    }

    /// Held-out target utterances, never used for adaptation.
    pub fn target_eval(&self, speaker: u32) -> Vec<&Utterance> {
        self.in_split(Split::TargetEval)
            .filter(|u| u.speaker_id == speaker)
            .collect()
    }

    pub fn speaker(&self, id: u32) -> Option<&SpeakerProfile> {
        self.manifest
            .base_speakers
            .iter()
            .chain(&self.manifest.target_speakers)
            .find(|s| s.speaker_id == id)
    }

    /// Writes `manifest.json` and `utts/*.mfcu` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let utt_dir = dir.join("utts");
        std::fs::create_dir_all(&utt_dir).map_err(|e| Error::io(&utt_dir, e))?;
        for (f, u) in self.manifest.files.iter().zip(&self.utterances) {
            let p = dir.join(&f.name);
            std::fs::write(&p, encode_utterance(u)).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join(MANIFEST);
        std::fs::write(&p, self.manifest.to_json()?).map_err(|e| Error::io(&p, e))
    }

    /// Loads and validates a corpus directory: every listed file must exist, match
    /// its recorded hash and agree with its manifest entry.
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let manifest: CorpusManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Manifest(format!("{}: {e}", p.display())))?;
        manifest.validate()?;
        let mut utterances = Vec::with_capacity(manifest.files.len());
        for f in &manifest.files {
            let path = dir.join(&f.name);
            if !path.is_file() {
                return Err(Error::Manifest(format!(
                    "manifest references missing file {}",
                    path.display()
                )));
            }
            let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if sha256_hex(&raw) != f.sha256 {
                return Err(Error::Manifest(format!("hash mismatch for {}", path.display())));
            }
            let u = decode_utterance(&raw, &path)?;
            if u.speaker_id != f.speaker_id || u.style_class != f.style_class {
                return Err(Error::Manifest(format!(
                    "{} disagrees with its manifest entry",
                    path.display()
                )));
            }
            utterances.push(u);
        }
        Ok(Self {
            manifest,
            utterances,
            hash: sha256_hex(&bytes),
        })
    }
}

fn sample_templates(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dim = CONTENT_BINS.len();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(VOCAB);
    while out.len() < VOCAB {
        let cand: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if out.iter().all(|t| dist(t, &cand) >= MIN_TEMPLATE_DISTANCE) {
            out.push(cand);
        }
    }
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sample_speakers(
    rng: &mut ChaCha8Rng,
    count: usize,
    min_distance: f64,
) -> Result<Vec<SpeakerProfile>> {
    let mut out: Vec<SpeakerProfile> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > MAX_SPEAKER_ATTEMPTS {
            return Err(Error::Config(format!(
                "could not place {count} speakers {min_distance} apart in {TIMBRE_DIM} timbre \
                 dimensions within {MAX_SPEAKER_ATTEMPTS} attempts"
            )));
        }
        let timbre: Vec<f64> = (0..TIMBRE_DIM).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if out.iter().all(|s| dist(&s.timbre, &timbre) >= min_distance) {
            out.push(SpeakerProfile {
                speaker_id: out.len() as u32,
                timbre,
            });
        }
    }
    Ok(out)
}

struct Plan {
    speaker: usize,
    split: Split,
}

/// Builds the whole corpus in memory. Identical `(seed, config)` give bit-identical
/// utterances and manifest.
pub fn build_corpus(seed: u64, config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let mut world = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
    let templates = sample_templates(&mut world);
    let mut spk_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0));
    let speakers = sample_speakers(
        &mut spk_rng,
        config.base_speakers + config.target_speakers,
        config.min_speaker_distance,
    )?;
    let (base, targets) = speakers.split_at(config.base_speakers);

    let mut plan = Vec::new();
    for s in 0..config.base_speakers {
        plan.extend((0..config.utts_per_base).map(|_| Plan {
            speaker: s,
            split: Split::Train,
        }));
    }
    plan.extend((0..config.test_utts).map(|i| Plan {
        speaker: i % config.base_speakers,
        split: Split::Test,
    }));
    for t in 0..config.target_speakers {
        let s = config.base_speakers + t;
        plan.extend((0..config.adapt_utts).map(|_| Plan {
            speaker: s,
            split: Split::Adapt,
        }));
        plan.extend((0..config.target_eval_utts).map(|_| Plan {
            speaker: s,
            split: Split::TargetEval,
        }));
    }

    let mut seen_content: HashSet<Vec<u16>> = HashSet::new();
    let mut files = Vec::with_capacity(plan.len());
    let mut utterances = Vec::with_capacity(plan.len());
    for (i, p) in plan.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, i as u64));
        // Test content must not occur in training data.
        let content = loop {
            let n = rng.random_range(config.min_tokens..=config.max_tokens);
            let c: Vec<u16> = (0..n).map(|_| rng.random_range(0..VOCAB as u16)).collect();
            if p.split != Split::Test || !seen_content.contains(&c) {
                break c;
            }
        };
        if p.split == Split::Train {
            seen_content.insert(content.clone());
        }
        let style = StyleSpec::new(
            rng.random_range(0..STYLE_CLASSES as u16),
            rng.random_range(-0.1..=0.1),
            rng.random_range(-0.1..=0.1),
            rng.random_range(0.0..std::f64::consts::TAU),
        )?;
        let u = synthesize_mel(
            &speakers[p.speaker],
            &content,
            &style,
            &templates,
            config.noise_sigma,
            derive_seed(seed, 4, i as u64),
        )?;
        let bytes = encode_utterance(&u);
        files.push(FileEntry {
            name: format!("utts/utt_{i:05}.mfcu"),
            speaker_id: u.speaker_id,
            style_class: u.style_class,
            frames: u.frames(),
            split: p.split,
            sha256: sha256_hex(&bytes),
        });
        utterances.push(u);
    }

    let manifest = CorpusManifest {
        format_version: 1,
        seed,
        config: config.clone(),
        bins: BINS,
        vocab: VOCAB,
        base_speakers: base.to_vec(),
        target_speakers: targets.to_vec(),
        content_templates: templates,
        files,
    };
    manifest.validate()?;
    let hash = sha256_hex(&manifest.to_json()?);
    Ok(Corpus {
        manifest,
        utterances,
        hash,
    })
}

/// Generates a corpus and persists it under `dir`.
pub fn generate_corpus(dir: &Path, seed: u64, config: &CorpusConfig) -> Result<Corpus> {
    let corpus = build_corpus(seed, config)?;
    corpus.save(dir)?;
    Ok(corpus)
}

/// Hash identifying a persisted corpus (SHA-256 of its manifest).
pub fn corpus_hash(dir: &Path) -> Result<String> {
    let p = dir.join(MANIFEST);
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    Ok(sha256_hex(&bytes))
}
