use std::fmt::Write as _;

use mfc_core::eval::MetricsReport;
use serde::{Deserialize, Serialize};

/// Hashes of the artifacts a report was computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub corpus: String,
    pub auxiliaries: String,
    pub base: String,
}

/// Conversions of test utterances to the target, plus conversions of the target's
/// own held-out utterances back to itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub conversion: MetricsReport,
    pub self_conversion: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseRun {
    pub target: u32,
    pub metrics: ModelMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptedRun {
    pub target: u32,
    pub seed: u64,
    /// Hash of the adapted checkpoint.
    pub checkpoint: String,
    pub metrics: ModelMetrics,
}

/// Means over runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub d_style: f64,
    pub p_lf0: f64,
    pub cos_sim: f64,
    pub oracle_timbre_cos: f64,
    pub content_error_rate: f64,
    pub self_p_lf0: f64,
}

impl Summary {
    pub fn of<'a>(runs: impl IntoIterator<Item = &'a ModelMetrics>) -> Self {
        let mut s = Summary::default();
        for m in runs {
            s.runs += 1;
            s.d_style += m.conversion.d_style;
            s.p_lf0 += m.conversion.p_lf0;
            s.cos_sim += m.conversion.cos_sim;
            s.oracle_timbre_cos += m.conversion.oracle_timbre_cos;
            s.content_error_rate += m.conversion.content_error_rate;
            s.self_p_lf0 += m.self_conversion.p_lf0;
        }
        if s.runs > 0 {
            let n = s.runs as f64;
            s.d_style /= n;
            s.p_lf0 /= n;
            s.cos_sim /= n;
            s.oracle_timbre_cos /= n;
            s.content_error_rate /= n;
            s.self_p_lf0 /= n;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub config_hash: String,
    pub lineage: Lineage,
    pub variant: String,
    pub adapt_utts: usize,
    pub targets: Vec<u32>,
    pub seeds: Vec<u64>,
    /// The unadapted base model driven by each target's adaptation centroid.
    pub base: Vec<BaseRun>,
    pub base_summary: Summary,
    pub runs: Vec<AdaptedRun>,
    pub summary: Summary,
}

const SUMMARY_HEADER: &str = "   d_style     p_lf0   cos_sim    oracle       cer  self_p_lf0";

fn summary_cols(s: &Summary) -> String {
    format!(
        "{:>10.6}{:>10.6}{:>10.6}{:>10.6}{:>10.6}{:>12.6}",
        s.d_style, s.p_lf0, s.cos_sim, s.oracle_timbre_cos, s.content_error_rate, s.self_p_lf0
    )
}

const CSV_HEADER: &str =
    "variant,adapt_utts,model,target,seed,d_style,p_lf0,cos_sim,oracle_timbre_cos,content_error_rate,self_p_lf0";

fn csv_cols(m: &ModelMetrics) -> String {
    let c = &m.conversion;
    format!(
        "{},{},{},{},{},{}",
        c.d_style, c.p_lf0, c.cos_sim, c.oracle_timbre_cos, c.content_error_rate, m.self_conversion.p_lf0
    )
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant {}  adaptation utterances {}", self.variant, self.adapt_utts);
        let _ = writeln!(s, "{:<8}{:>6}{:>6}{SUMMARY_HEADER}", "model", "tgt", "seed");
        for r in &self.base {
            let one = Summary::of([&r.metrics]);
            let _ = writeln!(s, "{:<8}{:>6}{:>6}{}", "base", r.target, "-", summary_cols(&one));
        }
        for r in &self.runs {
            let one = Summary::of([&r.metrics]);
            let _ = writeln!(s, "{:<8}{:>6}{:>6}{}", "adapted", r.target, r.seed, summary_cols(&one));
        }
        let _ = writeln!(s, "{:<20}{}", "mean base", summary_cols(&self.base_summary));
        let _ = writeln!(s, "{:<20}{}", "mean adapted", summary_cols(&self.summary));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.base {
            let _ = writeln!(
                s,
                "{},{},base,{},,{}",
                self.variant,
                self.adapt_utts,
                r.target,
                csv_cols(&r.metrics)
            );
        }
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},adapted,{},{},{}",
                self.variant,
                self.adapt_utts,
                r.target,
                r.seed,
                csv_cols(&r.metrics)
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub adapt_utts: usize,
    /// Mean over targets and seeds.
    pub summary: Summary,
    /// Mean over targets, per seed.
    pub per_seed: Vec<SeedSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub version: String,
    pub config_hash: String,
    pub lineage: Lineage,
    pub targets: Vec<u32>,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: &str, adapt_utts: usize) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.adapt_utts == adapt_utts)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16}{:>6}{:>15}{:>10}{:>10}{:>10}",
            "variant", "utts", "content_error", "d_style", "cos_sim", "p_lf0"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16}{:>6}{:>15.6}{:>10.6}{:>10.6}{:>10.6}",
                r.variant,
                r.adapt_utts,
                r.summary.content_error_rate,
                r.summary.d_style,
                r.summary.cos_sim,
                r.summary.p_lf0
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,adapt_utts,seed,content_error_rate,d_style,cos_sim,p_lf0\n");
        for r in &self.rows {
            let mut line = |seed: &str, m: &Summary| {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    r.variant, r.adapt_utts, seed, m.content_error_rate, m.d_style, m.cos_sim, m.p_lf0
                );
            };
            line("mean", &r.summary);
            for p in &r.per_seed {
                line(&p.seed.to_string(), &p.summary);
            }
        }
        s
    }
}
