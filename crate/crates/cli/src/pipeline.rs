use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use mfc_core::checkpoint::{sha256_hex, version_string, Checkpoint};
use mfc_core::constraints::{pretrain_auxiliaries, Auxiliaries};
use mfc_core::eval::{evaluate_conversion, MetricsReport};
use mfc_core::synthcorpus::{build_corpus, Corpus, Split};
use mfc_core::trainer::{
    adapt, train_base, AblationSwitches, AdaptedModel, BaseModel, ContentCache, LogRecord, Mode,
};
use serde::{Deserialize, Serialize};

use crate::config::{variant_name, ExperimentConfig};
use crate::error::{io_err, CliError, CliResult};
use crate::report::{
    AblationReport, AblationRow, AdaptedRun, BaseRun, EvalReport, Lineage, ModelMetrics,
    SeedSummary, Summary,
};

pub const CORPUS_DIR: &str = "corpus";
pub const STAMP: &str = "corpus/stamp.json";
pub const AUX_CKPT: &str = "auxiliaries.ckpt";
pub const BASE_CKPT: &str = "base.ckpt";

/// Everything a command needs: resolved configuration and output root.
#[derive(Clone, Debug)]
pub struct Context {
    pub out: PathBuf,
    pub config: ExperimentConfig,
    pub force: bool,
    pub csv: bool,
    /// Upper bound on concurrent adaptation jobs.
    pub threads: usize,
}

/// Worker count from `MFC_THREADS`, defaulting to the available parallelism.
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var("MFC_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("MFC_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CorpusStamp {
    version: String,
    config_hash: String,
    corpus_hash: String,
}

impl Context {
    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    fn adapted_rel(variant: &str, target: u32, n: usize, seed: u64) -> String {
        format!("adapted/{variant}/t{target}_n{n}_s{seed}")
    }

    fn refuse(&self, path: &Path) -> CliError {
        CliError::Config(format!(
            "{} exists and differs from what this configuration produces; pass --force to overwrite",
            path.display()
        ))
    }
}

fn note(msg: impl std::fmt::Display) {
    eprintln!("[mfc] {msg}");
}

/// Writes through a temporary sibling so readers never see partial files.
fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Writes `bytes` unless an identical file is already present. A different file
/// is only replaced under `--force`.
fn publish(ctx: &Context, path: &Path, bytes: &[u8]) -> CliResult<()> {
    if path.exists() && !ctx.force {
        let old = std::fs::read(path).map_err(|e| io_err(path, e))?;
        if old == bytes {
            note(format!("{} is up to date", path.display()));
            return Ok(());
        }
        return Err(ctx.refuse(path));
    }
    write_file(path, bytes)
}

fn read_checkpoint(path: &Path, what: &str, producer: &str) -> CliResult<(Checkpoint, String)> {
    if !path.is_file() {
        return Err(CliError::stale(path, format!("no {what}; run `mfc {producer}` first")));
    }
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let c = Checkpoint::from_bytes(&bytes, path)
        .map_err(|e| CliError::stale(path, format!("unreadable {what}: {e}")))?;
    Ok((c, sha256_hex(&bytes)))
}

fn expect_eq(path: &Path, what: &str, recorded: Option<&str>, current: &str) -> CliResult<()> {
    match recorded {
        Some(r) if r == current => Ok(()),
        Some(r) => Err(CliError::stale(
            path,
            format!("recorded {what} {} does not match current {}", short(r), short(current)),
        )),
        None => Err(CliError::stale(path, format!("no recorded {what}"))),
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

fn load_corpus(ctx: &Context) -> CliResult<Corpus> {
    let stamp_path = ctx.path(STAMP);
    if !stamp_path.is_file() {
        return Err(CliError::stale(&stamp_path, "no corpus; run `mfc gen-corpus` first"));
    }
    let raw = std::fs::read(&stamp_path).map_err(|e| io_err(&stamp_path, e))?;
    let stamp: CorpusStamp = serde_json::from_slice(&raw)
        .map_err(|e| CliError::stale(&stamp_path, format!("unreadable stamp: {e}")))?;
    expect_eq(&stamp_path, "config hash", Some(&stamp.config_hash), &ctx.config.corpus_hash())?;
    let corpus = Corpus::load(&ctx.path(CORPUS_DIR))
        .map_err(|e| CliError::stale(&ctx.path(CORPUS_DIR), e))?;
    expect_eq(&stamp_path, "corpus hash", Some(&stamp.corpus_hash), &corpus.hash)?;
    Ok(corpus)
}

fn check_aux(ctx: &Context, c: &Checkpoint, corpus: &Corpus) -> CliResult<()> {
    let p = ctx.path(AUX_CKPT);
    expect_eq(&p, "config hash", Some(&c.config_hash), &ctx.config.pretrain_hash())?;
    expect_eq(&p, "corpus hash", c.corpus_hash.as_deref(), &corpus.hash)
}

fn load_aux(ctx: &Context, corpus: &Corpus) -> CliResult<(Auxiliaries, String)> {
    let (c, hash) = read_checkpoint(&ctx.path(AUX_CKPT), "auxiliary networks", "pretrain")?;
    check_aux(ctx, &c, corpus)?;
    Ok((Auxiliaries::from_checkpoint(&c)?, hash))
}

fn check_base(ctx: &Context, c: &Checkpoint, corpus: &Corpus, aux_hash: &str) -> CliResult<()> {
    let p = ctx.path(BASE_CKPT);
    expect_eq(&p, "config hash", Some(&c.config_hash), &ctx.config.base_hash())?;
    expect_eq(&p, "corpus hash", c.corpus_hash.as_deref(), &corpus.hash)?;
    expect_eq(&p, "auxiliary hash", c.parent_hash.as_deref(), aux_hash)
}

fn load_base(ctx: &Context, corpus: &Corpus, aux_hash: &str) -> CliResult<(BaseModel, String)> {
    let (c, hash) = read_checkpoint(&ctx.path(BASE_CKPT), "base model", "train-base")?;
    check_base(ctx, &c, corpus, aux_hash)?;
    Ok((BaseModel::from_checkpoint(&c)?, hash))
}

fn jsonl_header(stage: &str, config_hash: &str) -> String {
    serde_json::json!({ "stage": stage, "version": version_string(), "config_hash": config_hash })
        .to_string()
}

fn log_lines(stage: &str, config_hash: &str, records: &[LogRecord]) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "{}", jsonl_header(stage, config_hash)).expect("vec write");
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn cmd_gen_corpus(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let stamp_path = ctx.path(STAMP);
    let corpus = build_corpus(cfg.seed, &cfg.corpus)?;
    let stamp = CorpusStamp {
        version: version_string(),
        config_hash: cfg.corpus_hash(),
        corpus_hash: corpus.hash.clone(),
    };
    let stamp_bytes = serde_json::to_vec_pretty(&stamp)?;
    if stamp_path.exists() && !ctx.force {
        let old = std::fs::read(&stamp_path).map_err(|e| io_err(&stamp_path, e))?;
        if old == stamp_bytes && load_corpus(ctx).is_ok() {
            note("corpus is up to date");
            return Ok(());
        }
        return Err(ctx.refuse(&stamp_path));
    }
    let dir = ctx.path(CORPUS_DIR);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    corpus.save(&dir)?;
    write_file(&stamp_path, &stamp_bytes)?;
    note(format!(
        "corpus: {} utterances, {} base and {} target speakers, hash {}",
        corpus.utterances.len(),
        corpus.base_speaker_ids().len(),
        corpus.target_speaker_ids().len(),
        short(&corpus.hash)
    ));
    Ok(())
}

pub fn cmd_pretrain(ctx: &Context) -> CliResult<()> {
    let corpus = load_corpus(ctx)?;
    let path = ctx.path(AUX_CKPT);
    if path.exists() && !ctx.force {
        let (c, _) = read_checkpoint(&path, "auxiliary networks", "pretrain")?;
        if check_aux(ctx, &c, &corpus).is_ok() {
            note("auxiliary networks are up to date");
            return Ok(());
        }
        return Err(ctx.refuse(&path));
    }
    let t0 = Instant::now();
    let pcfg = ctx.config.pretrain_config();
    let (aux, report) = pretrain_auxiliaries(&corpus, &pcfg)?;
    let ckpt = aux.to_checkpoint(&ctx.config.pretrain_hash(), &corpus.hash)?;
    write_file(&path, &ckpt.to_bytes()?)?;
    let log = serde_json::json!({
        "stage": "pretrain",
        "version": version_string(),
        "config_hash": ctx.config.pretrain_hash(),
        "report": report,
    });
    write_file(&ctx.path("logs/pretrain.json"), &serde_json::to_vec_pretty(&log)?)?;
    note(format!("pretrained auxiliaries in {:.1} s", t0.elapsed().as_secs_f64()));
    Ok(())
}

pub fn cmd_train_base(ctx: &Context) -> CliResult<()> {
    let corpus = load_corpus(ctx)?;
    let (aux, aux_hash) = load_aux(ctx, &corpus)?;
    let path = ctx.path(BASE_CKPT);
    if path.exists() && !ctx.force {
        let (c, _) = read_checkpoint(&path, "base model", "train-base")?;
        if check_base(ctx, &c, &corpus, &aux_hash).is_ok() {
            note("base model is up to date");
            return Ok(());
        }
        return Err(ctx.refuse(&path));
    }
    let t0 = Instant::now();
    let cache = ContentCache::build(&corpus, &aux)?;
    let cfg = ctx.config.base_config();
    let epochs = cfg.epochs;
    let mut records = Vec::new();
    let mut shown = None;
    let base = train_base(&corpus, &aux, &cache, &cfg, &ctx.config.vc, &mut |r| {
        let edge = r.epoch == 0 || r.epoch + 1 == epochs;
        if edge && r.mode == Mode::Recon && shown != Some(r.epoch) {
            shown = Some(r.epoch);
            note(format!("base epoch {} mel {:?}", r.epoch, r.breakdown.mel));
        }
        records.push(r)
    })?;
    let mut ckpt = base.to_checkpoint(&ctx.config.base_hash(), &corpus.hash);
    ckpt.parent_hash = Some(aux_hash);
    write_file(&ctx.path("logs/base.jsonl"), &log_lines("train-base", &ctx.config.base_hash(), &records)?)?;
    write_file(&path, &ckpt.to_bytes()?)?;
    note(format!("trained base model in {:.1} s", t0.elapsed().as_secs_f64()));
    Ok(())
}

/// One adaptation run.
#[derive(Clone, Debug)]
pub struct Job {
    pub variant: String,
    pub ablation: AblationSwitches,
    pub adapt_utts: usize,
    pub target: u32,
    pub seed: u64,
}

/// Shared read-only state of the adaptation and evaluation stages.
struct Stage {
    corpus: Corpus,
    aux: Auxiliaries,
    cache: ContentCache,
    base: BaseModel,
    lineage: Lineage,
    targets: Vec<u32>,
}

fn load_stage(ctx: &Context) -> CliResult<Stage> {
    let corpus = load_corpus(ctx)?;
    let (aux, aux_hash) = load_aux(ctx, &corpus)?;
    let (base, base_hash) = load_base(ctx, &corpus, &aux_hash)?;
    let cache = ContentCache::build(&corpus, &aux)?;
    let all = corpus.target_speaker_ids();
    let targets = if ctx.config.targets.is_empty() {
        all
    } else {
        for t in &ctx.config.targets {
            if !all.contains(t) {
                return Err(CliError::Config(format!("speaker {t} is not an adaptation target")));
            }
        }
        ctx.config.targets.clone()
    };
    if targets.is_empty() {
        return Err(CliError::Config("corpus has no target speakers".into()));
    }
    let lineage = Lineage {
        corpus: corpus.hash.clone(),
        auxiliaries: aux_hash,
        base: base_hash,
    };
    Ok(Stage {
        corpus,
        aux,
        cache,
        base,
        lineage,
        targets,
    })
}

fn check_adapted(ctx: &Context, path: &Path, c: &Checkpoint, job: &Job, base_hash: &str) -> CliResult<()> {
    let cfg = ctx.config.adapt_config(&job.ablation, job.adapt_utts, job.seed);
    let hash = ctx.config.adapt_hash(&cfg, job.target, job.adapt_utts);
    expect_eq(path, "config hash", Some(&c.config_hash), &hash)?;
    expect_eq(path, "base hash", c.parent_hash.as_deref(), base_hash)
}

/// Adapts for `job`, reusing an up-to-date checkpoint when one exists.
fn run_adapt_job(ctx: &Context, st: &Stage, job: &Job) -> CliResult<(AdaptedModel, String)> {
    let rel = Context::adapted_rel(&job.variant, job.target, job.adapt_utts, job.seed);
    let path = ctx.path(format!("{rel}.ckpt"));
    if path.exists() && !ctx.force {
        let (c, hash) = read_checkpoint(&path, "adapted model", "adapt")?;
        if check_adapted(ctx, &path, &c, job, &st.lineage.base).is_ok() {
            note(format!("{} is up to date", path.display()));
            return Ok((AdaptedModel::from_checkpoint(&c)?, hash));
        }
        return Err(ctx.refuse(&path));
    }
    let t0 = Instant::now();
    let cfg = ctx.config.adapt_config(&job.ablation, job.adapt_utts, job.seed);
    let mut records = Vec::new();
    let model = adapt(
        &st.base,
        &st.aux,
        &st.corpus,
        &st.cache,
        job.target,
        job.adapt_utts,
        &cfg,
        &mut |r| records.push(r),
    )?;
    let config_hash = ctx.config.adapt_hash(&cfg, job.target, job.adapt_utts);
    let bytes = model.to_checkpoint(&config_hash, &st.lineage.base).to_bytes()?;
    write_file(
        &ctx.path(format!("logs/{rel}.jsonl")),
        &log_lines("adapt", &config_hash, &records)?,
    )?;
    write_file(&path, &bytes)?;
    note(format!(
        "adapted {} to speaker {} on {} utterance(s), seed {}, in {:.1} s",
        job.variant,
        job.target,
        job.adapt_utts,
        job.seed,
        t0.elapsed().as_secs_f64()
    ));
    Ok((model, sha256_hex(&bytes)))
}

/// Runs `f` over `items` on up to `threads` workers; results keep input order and
/// the first error in input order is returned.
fn run_parallel<J: Sync, T: Send>(
    threads: usize,
    items: &[J],
    f: impl Fn(&J) -> CliResult<T> + Sync,
) -> CliResult<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CliResult<T>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn jobs_for(ctx: &Context, targets: &[u32], ablation: AblationSwitches, n: usize) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &target in targets {
        for &seed in &ctx.config.seeds {
            jobs.push(Job {
                variant: variant_name(&ablation),
                ablation,
                adapt_utts: n,
                target,
                seed,
            });
        }
    }
    jobs
}

pub fn cmd_adapt(ctx: &Context) -> CliResult<()> {
    let st = load_stage(ctx)?;
    let jobs = jobs_for(ctx, &st.targets, ctx.config.ablation(), ctx.config.adapt_utts);
    run_parallel(ctx.threads, &jobs, |j| run_adapt_job(ctx, &st, j))?;
    Ok(())
}

fn evaluation_sources(ctx: &Context, corpus: &Corpus) -> CliResult<Vec<usize>> {
    let test = corpus.split_indices(Split::Test);
    if test.is_empty() {
        return Err(CliError::Config("corpus has no test utterances".into()));
    }
    Ok(test.into_iter().take(ctx.config.eval_sources).collect())
}

fn model_metrics(
    st: &Stage,
    vc: &mfc_core::vcmodel::VcModel,
    speaker: &mfc_core::constraints::SpeakerEmbedding,
    sources: &[usize],
    target: u32,
) -> CliResult<ModelMetrics> {
    let own: Vec<usize> = st
        .corpus
        .split_indices(Split::TargetEval)
        .into_iter()
        .filter(|&i| st.corpus.utterances[i].speaker_id == target)
        .collect();
    let conv = |src: &[usize]| -> CliResult<MetricsReport> {
        Ok(evaluate_conversion(vc, speaker, &st.aux, &st.corpus, &st.cache, src, target)?)
    };
    Ok(ModelMetrics {
        conversion: conv(sources)?,
        self_conversion: conv(&own)?,
    })
}

fn base_runs(st: &Stage, sources: &[usize], n: usize) -> CliResult<Vec<BaseRun>> {
    st.targets
        .iter()
        .map(|&target| {
            let utts = st.corpus.adaptation_set(target, n)?;
            let speaker = st.aux.centroid(&utts)?;
            Ok(BaseRun {
                target,
                metrics: model_metrics(st, &st.base.vc, &speaker, sources, target)?,
            })
        })
        .collect()
}

/// Loads the adapted checkpoint of `job`; a missing or mismatched one is stale.
fn load_adapted(ctx: &Context, st: &Stage, job: &Job) -> CliResult<(AdaptedModel, String)> {
    let rel = Context::adapted_rel(&job.variant, job.target, job.adapt_utts, job.seed);
    let path = ctx.path(format!("{rel}.ckpt"));
    let (c, hash) = read_checkpoint(&path, "adapted model", "adapt")?;
    check_adapted(ctx, &path, &c, job, &st.lineage.base)?;
    Ok((AdaptedModel::from_checkpoint(&c)?, hash))
}

fn adapted_run(st: &Stage, sources: &[usize], job: &Job, model: &AdaptedModel, hash: String) -> CliResult<AdaptedRun> {
    Ok(AdaptedRun {
        target: job.target,
        seed: job.seed,
        checkpoint: hash,
        metrics: model_metrics(st, &model.vc, &model.speaker, sources, job.target)?,
    })
}

fn write_report(ctx: &Context, stem: &str, json: &[u8], text: &str, csv: &str) -> CliResult<()> {
    publish(ctx, &ctx.path(format!("reports/{stem}.json")), json)?;
    publish(ctx, &ctx.path(format!("reports/{stem}.txt")), text.as_bytes())?;
    if ctx.csv {
        publish(ctx, &ctx.path(format!("reports/{stem}.csv")), csv.as_bytes())?;
    }
    Ok(())
}

/// Evaluation report path stem for the configured variant and utterance count.
pub fn eval_stem(cfg: &ExperimentConfig) -> String {
    format!("eval_{}_n{}", variant_name(&cfg.ablation()), cfg.adapt_utts)
}

pub fn cmd_eval(ctx: &Context) -> CliResult<EvalReport> {
    let st = load_stage(ctx)?;
    let n = ctx.config.adapt_utts;
    let jobs = jobs_for(ctx, &st.targets, ctx.config.ablation(), n);
    let loaded = jobs
        .iter()
        .map(|j| load_adapted(ctx, &st, j))
        .collect::<CliResult<Vec<_>>>()?;
    let sources = evaluation_sources(ctx, &st.corpus)?;
    let base = base_runs(&st, &sources, n)?;
    let pairs: Vec<(&Job, &(AdaptedModel, String))> = jobs.iter().zip(&loaded).collect();
    let runs = run_parallel(ctx.threads, &pairs, |(j, (m, h))| {
        adapted_run(&st, &sources, j, m, h.clone())
    })?;
    let report = EvalReport {
        version: version_string(),
        config_hash: ctx.config.eval_hash(),
        lineage: st.lineage.clone(),
        variant: variant_name(&ctx.config.ablation()),
        adapt_utts: n,
        targets: st.targets.clone(),
        seeds: ctx.config.seeds.clone(),
        base_summary: Summary::of(base.iter().map(|r| &r.metrics)),
        base,
        summary: Summary::of(runs.iter().map(|r| &r.metrics)),
        runs,
    };
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_report(ctx, &eval_stem(&ctx.config), &json, &report.to_text(), &report.to_csv())?;
    Ok(report)
}

pub fn cmd_ablate(ctx: &Context) -> CliResult<AblationReport> {
    let st = load_stage(ctx)?;
    let sources = evaluation_sources(ctx, &st.corpus)?;
    let mut jobs = Vec::new();
    for &n in &ctx.config.ablate_utts {
        for (_, a) in AblationSwitches::variants() {
            jobs.extend(jobs_for(ctx, &st.targets, a, n));
        }
    }
    let runs = run_parallel(ctx.threads, &jobs, |j| {
        let (m, h) = run_adapt_job(ctx, &st, j)?;
        adapted_run(&st, &sources, j, &m, h)
    })?;
    let mut rows = Vec::new();
    for &n in &ctx.config.ablate_utts {
        for (name, _) in AblationSwitches::variants() {
            let mine: Vec<(&Job, &AdaptedRun)> = jobs
                .iter()
                .zip(&runs)
                .filter(|(j, _)| j.variant == name && j.adapt_utts == n)
                .collect();
            let per_seed = ctx
                .config
                .seeds
                .iter()
                .map(|&seed| SeedSummary {
                    seed,
                    summary: Summary::of(
                        mine.iter().filter(|(j, _)| j.seed == seed).map(|(_, r)| &r.metrics),
                    ),
                })
                .collect();
            rows.push(AblationRow {
                variant: name.to_string(),
                adapt_utts: n,
                summary: Summary::of(mine.iter().map(|(_, r)| &r.metrics)),
                per_seed,
            });
        }
    }
    let report = AblationReport {
        version: version_string(),
        config_hash: ctx.config.ablate_hash(),
        lineage: st.lineage.clone(),
        targets: st.targets.clone(),
        seeds: ctx.config.seeds.clone(),
        rows,
    };
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_report(ctx, "ablation", &json, &report.to_text(), &report.to_csv())?;
    Ok(report)
}
