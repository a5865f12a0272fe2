//! Objective metrics with corpus oracles.
//!
//! The converted lf0 contour is read from mel column 0, the bin that carries
//! pitch in the synthetic corpus. Speaker similarity uses the frozen indicator
//! and is reported next to an oracle cosine between the converted timbre bins
//! and the target's ground-truth timbre vector.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::constraints::{Auxiliaries, SpeakerEmbedding, SpeakerIndicator, Ser, StyleLevel};
use crate::constraints::AsrStandin;
use crate::synthcorpus::{Corpus, Utterance, LF0_BIN, TIMBRE_BINS};
use crate::trainer::ContentCache;
use crate::vcmodel::VcModel;
use crate::{Error, Real, Result, Tensor};

/// Pearson correlation; zero-variance input gives 0 with `degenerate` set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

pub fn pearson<T: Real>(a: &[T], b: &[T]) -> Result<Correlation> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "correlation of sequences with {} and {} elements",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(Correlation { value: 0.0, degenerate: true });
    }
    let n = T::from_usize(a.len()).unwrap();
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == T::zero() || sbb == T::zero() {
        return Ok(Correlation { value: 0.0, degenerate: true });
    }
    let r = (sab / (saa * sbb).sqrt()).as_f64();
    Ok(Correlation {
        value: r.clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Sum of the middle- and high-level style distances.
pub fn metric_d_style(ser: &Ser, source: &Tensor, converted: &Tensor) -> Result<f64> {
    Ok(ser
        .style_distance(source, converted, &[StyleLevel::M, StyleLevel::H])?
        .iter()
        .sum())
}

pub fn metric_p_lf0(source_lf0: &[f64], converted: &Tensor) -> Result<Correlation> {
    if converted.rows() != source_lf0.len() {
        return Err(Error::Contract(format!(
            "source has {} frames, converted mel has {}",
            source_lf0.len(),
            converted.rows()
        )));
    }
    pearson(source_lf0, &converted.column(LF0_BIN))
}

pub fn metric_cos_sim(
    indicator: &SpeakerIndicator,
    converted: &Tensor,
    target_centroid: &SpeakerEmbedding,
) -> Result<f64> {
    indicator.embed(converted)?.cosine(target_centroid)
}

/// Fraction of token positions whose decoded token differs from the source token.
pub fn metric_content_error(asr: &AsrStandin, source_tokens: &[u16], converted: &Tensor) -> Result<f64> {
    let decoded = asr.decode_tokens(converted)?;
    if decoded.len() != source_tokens.len() {
        return Err(Error::Contract(format!(
            "{} source tokens, {} decoded",
            source_tokens.len(),
            decoded.len()
        )));
    }
    let wrong = decoded.iter().zip(source_tokens).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / source_tokens.len() as f64)
}

/// Cosine between mean converted timbre bins and a ground-truth timbre vector.
pub fn oracle_timbre_cos(converted: &Tensor, timbre: &[f64]) -> Result<f64> {
    let t = converted.rows() as f64;
    let mean: Vec<f64> = TIMBRE_BINS
        .map(|b| converted.column(b).iter().sum::<f64>() / t)
        .collect();
    SpeakerEmbedding(mean).cosine(&SpeakerEmbedding(timbre.to_vec()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub source_speaker: u32,
    pub target_speaker: u32,
    pub frames: usize,
    pub d_style: f64,
    pub p_lf0: f64,
    pub p_lf0_degenerate: bool,
    pub cos_sim: f64,
    pub oracle_timbre_cos: f64,
    pub content_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub d_style: f64,
    pub p_lf0: f64,
    pub cos_sim: f64,
    pub oracle_timbre_cos: f64,
    pub content_error_rate: f64,
    pub degenerate_p_lf0: usize,
    pub rows: Vec<MetricsRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricsRow>) -> Self {
        Self {
            d_style: mean(rows.iter().map(|r| r.d_style)),
            p_lf0: mean(rows.iter().map(|r| r.p_lf0)),
            cos_sim: mean(rows.iter().map(|r| r.cos_sim)),
            oracle_timbre_cos: mean(rows.iter().map(|r| r.oracle_timbre_cos)),
            content_error_rate: mean(rows.iter().map(|r| r.content_error)),
            degenerate_p_lf0: rows.iter().filter(|r| r.p_lf0_degenerate).count(),
            rows,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Aggregates followed by one aligned row per converted utterance.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d_style             {:>10.6}", self.d_style);
        let _ = writeln!(s, "p_lf0               {:>10.6}", self.p_lf0);
        let _ = writeln!(s, "cos_sim             {:>10.6}", self.cos_sim);
        let _ = writeln!(s, "oracle_timbre_cos   {:>10.6}", self.oracle_timbre_cos);
        let _ = writeln!(s, "content_error_rate  {:>10.6}", self.content_error_rate);
        let _ = writeln!(s, "degenerate_p_lf0    {:>10}", self.degenerate_p_lf0);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>4} {:>4} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "src", "tgt", "frames", "d_style", "p_lf0", "cos_sim", "oracle", "cer"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>4} {:>4} {:>6} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                r.source_speaker,
                r.target_speaker,
                r.frames,
                r.d_style,
                r.p_lf0,
                r.cos_sim,
                r.oracle_timbre_cos,
                r.content_error
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "source_speaker,target_speaker,frames,d_style,p_lf0,p_lf0_degenerate,cos_sim,oracle_timbre_cos,content_error\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.source_speaker,
                r.target_speaker,
                r.frames,
                r.d_style,
                r.p_lf0,
                r.p_lf0_degenerate,
                r.cos_sim,
                r.oracle_timbre_cos,
                r.content_error
            );
        }
        s
    }
}

/// Scores one converted utterance against its source and the target speaker.
pub fn score_conversion(
    aux: &Auxiliaries,
    source: &Utterance,
    converted: &Tensor,
    target_id: u32,
    target_centroid: &SpeakerEmbedding,
    target_timbre: &[f64],
) -> Result<MetricsRow> {
    let p = metric_p_lf0(&source.lf0, converted)?;
    Ok(MetricsRow {
        source_speaker: source.speaker_id,
        target_speaker: target_id,
        frames: source.frames(),
        d_style: metric_d_style(&aux.ser, &source.mel, converted)?,
        p_lf0: p.value,
        p_lf0_degenerate: p.degenerate,
        cos_sim: metric_cos_sim(&aux.indicator, converted, target_centroid)?,
        oracle_timbre_cos: oracle_timbre_cos(converted, target_timbre)?,
        content_error: metric_content_error(&aux.asr, &source.content, converted)?,
    })
}

/// Converts each source (given by corpus position) to `target` with speaker vector
/// `speaker` and scores it. Cos.Sim is measured against the centroid of the
/// target's held-out utterances.
pub fn evaluate_conversion(
    vc: &VcModel,
    speaker: &SpeakerEmbedding,
    aux: &Auxiliaries,
    corpus: &Corpus,
    cache: &ContentCache,
    sources: &[usize],
    target: u32,
) -> Result<MetricsReport> {
    let held = corpus.target_eval(target);
    let reference = if held.is_empty() {
        return Err(Error::Contract(format!("speaker {target} has no held-out utterances")));
    } else {
        aux.centroid(&held)?
    };
    let timbre = &corpus
        .speaker(target)
        .ok_or_else(|| Error::Contract(format!("unknown speaker {target}")))?
        .timbre;
    let rows = sources
        .iter()
        .map(|&i| {
            let src = &corpus.utterances[i];
            let y = vc.convert_utterance(src, cache.get(i), speaker)?;
            score_conversion(aux, src, &y, target, &reference, timbre)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_rows(rows))
}

/// Mean pairwise cosine within and across speakers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    /// `None` when no speaker has two utterances.
    pub intra: Option<f64>,
    pub inter: Option<f64>,
    /// Speakers with a single utterance, excluded from `intra`.
    pub singleton_speakers: Vec<u32>,
}

impl SimilarityStats {
    pub fn gap(&self) -> Option<f64> {
        Some(self.intra? - self.inter?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerModelTable {
    pub classifier: SimilarityStats,
    pub indicator: SimilarityStats,
}

pub fn similarity_stats(items: &[(u32, SpeakerEmbedding)]) -> Result<SimilarityStats> {
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for (i, (si, ei)) in items.iter().enumerate() {
        for (sj, ej) in &items[i + 1..] {
            let c = ei.cosine(ej)?;
            if si == sj {
                intra.push(c);
            } else {
                inter.push(c);
            }
        }
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for (s, _) in items {
        *counts.entry(*s).or_default() += 1;
    }
    let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(SimilarityStats {
        intra: avg(&intra),
        inter: avg(&inter),
        singleton_speakers: counts.into_iter().filter(|&(_, n)| n == 1).map(|(s, _)| s).collect(),
    })
}

/// Intra/inter cosine of classifier embeddings and indicator embeddings over
/// `utts`.
pub fn speaker_model_table(aux: &Auxiliaries, utts: &[&Utterance]) -> Result<SpeakerModelTable> {
    let cls = utts
        .iter()
        .map(|u| Ok((u.speaker_id, aux.classifier.embedding(&u.mel)?)))
        .collect::<Result<Vec<_>>>()?;
    let ind = utts
        .iter()
        .map(|u| Ok((u.speaker_id, aux.indicator.embed(&u.mel)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpeakerModelTable {
        classifier: similarity_stats(&cls)?,
        indicator: similarity_stats(&ind)?,
    })
}
