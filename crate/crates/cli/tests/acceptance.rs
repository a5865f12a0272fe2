//! Acceptance run: drives the `mfc` binary through the default toy-scale pipeline,
//! then checks each criterion against the produced artifacts. Prints one PASS/FAIL
//! line per criterion. Red criteria only fail the process when
//! `MFC_ACCEPTANCE_STRICT=1`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mfc_cli::{AblationReport, EvalReport};
use mfc_core::checkpoint::sha256_hex;
use mfc_core::constraints::{
    loss_adv, loss_real_fake, loss_spk_cos, loss_triplet, AsrStandin, Auxiliaries, Auxiliary,
    ContentModel, Discriminator, FakeTerm, Ser, SpeakerClassifier, SpeakerEmbedding,
    SpeakerIndicator, StyleLevel,
};
use mfc_core::eval::speaker_model_table;
use mfc_core::params::ParamSet;
use mfc_core::synthcorpus::{Corpus, Split, Utterance, BINS};
use mfc_core::trainer::{
    adapt, loss_recon, loss_simu, loss_weight_reg, train_base, BaseModel, ContentCache,
    LossBreakdown, ReconItem, Session, SimuItem, TrainingConfig, Weights,
};
use mfc_core::vcmodel::{ContentFeatures, VcConfig, VcModel};
use mfc_core::{grad_check, Graph, Tensor, Var};

const STEP: f64 = 1e-5;
const RTOL: f64 = 1e-4;
const EXACT: f64 = 1e-12;

struct Line {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn line(id: &'static str, title: &'static str, pass: bool, detail: String) -> Line {
    Line {
        id,
        title,
        pass,
        detail,
    }
}

/// Runs `f`, turning a panic into a failed line for `id`.
fn guarded(id: &'static str, title: &'static str, f: impl FnOnce() -> Vec<Line>) -> Vec<Line> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(lines) => lines,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            vec![line(id, title, false, format!("aborted: {msg}"))]
        }
    }
}

fn mfc(out: &Path, args: &[&str], env: &[(&str, &str)]) -> (i32, String, f64) {
    let t0 = Instant::now();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mfc"));
    cmd.arg("--out").arg(out).args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let o = cmd.output().expect("spawn mfc");
    let stderr = String::from_utf8_lossy(&o.stderr).into_owned();
    (o.status.code().unwrap_or(-1), stderr, t0.elapsed().as_secs_f64())
}

fn file_hash(p: &Path) -> String {
    sha256_hex(&std::fs::read(p).expect("read artifact"))
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_slice(&std::fs::read(p).expect("read report")).expect("parse report")
}

// ---------------------------------------------------------------------------
// Micro-instances for gradient and loss-structure checks
// ---------------------------------------------------------------------------

struct Micro {
    vc: VcModel,
    aux: Auxiliaries,
    disc: Discriminator,
    utts: Vec<Utterance>,
    feats: Vec<ContentFeatures>,
    speakers: Vec<SpeakerEmbedding>,
    anchor: ParamSet,
}

fn wave(rows: usize, cols: usize, freq: f64, phase: f64) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|i| (i as f64 * freq + phase).sin()).collect(),
    )
    .unwrap()
}

fn micro_utt(frames: usize, speaker: u32, phase: f64) -> Utterance {
    Utterance {
        mel: wave(frames, BINS, 0.37, phase),
        lf0: (0..frames).map(|t| (t as f64 + phase).cos()).collect(),
        energy: (0..frames).map(|t| 0.5 + 0.1 * t as f64).collect(),
        content: vec![3; frames.div_ceil(4)],
        speaker_id: speaker,
        style_class: 1,
    }
}

fn micro() -> Micro {
    let mut aux = Auxiliaries {
        asr: AsrStandin::new(1).unwrap(),
        content: ContentModel::new(2).unwrap(),
        ser: Ser::new(3).unwrap(),
        indicator: SpeakerIndicator::new(4).unwrap(),
        classifier: SpeakerClassifier::new(vec![0, 1, 2], 5).unwrap(),
    };
    aux.asr.freeze();
    aux.content.freeze();
    aux.ser.freeze();
    aux.indicator.freeze();
    aux.classifier.freeze();
    let mut disc = Discriminator::new(6).unwrap();
    disc.freeze();
    let mut vc = VcModel::new(VcConfig {
        hidden: 8,
        prenet: 4,
        blocks: 1,
        ..VcConfig::default()
    })
    .unwrap();
    for (_, t) in vc.params.iter_mut() {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += 0.01 * ((i % 5) as f64 - 2.0);
        }
    }
    let mut anchor = vc.params.clone();
    for (_, t) in anchor.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= 0.9);
    }
    let frames = 8;
    Micro {
        vc,
        aux,
        disc,
        utts: vec![micro_utt(frames, 1, 0.0), micro_utt(frames, 2, 0.9)],
        feats: vec![
            ContentFeatures::new(wave(frames, 12, 0.21, 1.6)).unwrap(),
            ContentFeatures::new(wave(frames, 12, 0.21, 2.9)).unwrap(),
        ],
        speakers: (0..2)
            .map(|k| SpeakerEmbedding((0..16).map(|i| ((i + 1) as f64 * (0.3 + 0.5 * k as f64)).sin()).collect()))
            .collect(),
        anchor,
    }
}

impl Micro {
    fn recon(&self) -> Vec<ReconItem<'_>> {
        (0..2)
            .map(|i| ReconItem {
                utt: &self.utts[i],
                content: &self.feats[i],
                speaker: &self.speakers[i],
                dropout_seed: Some(i as u64),
            })
            .collect()
    }

    fn simu(&self) -> Vec<SimuItem<'_>> {
        (0..2)
            .map(|i| SimuItem {
                source: &self.utts[i],
                content: &self.feats[i],
                target_id: 20,
                target: &self.speakers[1 - i],
            })
            .collect()
    }
}

fn adapt_cfg() -> TrainingConfig {
    TrainingConfig::adapt_published(1)
}

/// Worst relative error of `f` at `x`, or a failure description.
fn check(label: &str, x: &Tensor, f: impl Fn(&mut Graph, Var) -> Var) -> Result<f64, String> {
    let r = grad_check(|g, v| Ok(f(g, v)), x, STEP, RTOL);
    if r.pass {
        Ok(r.max_relative_error)
    } else {
        Err(format!("{label}: rel err {:.2e} ({:?})", r.max_relative_error, r.diagnostic))
    }
}

fn criterion_1() -> Vec<Line> {
    let t0 = Instant::now();
    let m = micro();
    let a = &m.aux;
    let src = m.utts[0].mel.clone();
    let pred = wave(8, BINS, 0.53, 0.4);
    let target = m.speakers[1].to_tensor();
    let mut results: Vec<Result<f64, String>> = Vec::new();
    let mut with_pred = |label: &str, f: &dyn Fn(&mut Graph, Var) -> Var| {
        results.push(check(label, &pred, f));
    };
    with_pred("mel", &|g, x| {
        let y = g.constant(src.clone());
        g.mse(x, y).unwrap()
    });
    with_pred("spk_ce", &|g, x| {
        let b = a.classifier.bind(g);
        a.classifier.loss_spk_ce(g, &b, x, 1).unwrap()
    });
    with_pred("triplet", &|g, x| {
        let b = a.indicator.bind(g);
        let za = a.indicator.embed_in(g, &b, x).unwrap();
        let zp = g.constant(m.speakers[0].to_tensor());
        let zn: Vec<Var> = [0.7, 1.9, 2.4]
            .iter()
            .map(|&p| g.constant(wave(1, 16, 0.8, p)))
            .collect();
        loss_triplet(g, za, zp, &zn).unwrap()
    });
    with_pred("spk_cos", &|g, x| {
        let b = a.indicator.bind(g);
        let z = a.indicator.embed_in(g, &b, x).unwrap();
        let t = g.constant(target.clone());
        loss_spk_cos(g, z, t).unwrap()
    });
    for level in StyleLevel::ALL {
        with_pred(&format!("style_{level:?}"), &|g, x| {
            let b = a.ser.bind(g);
            let s = g.constant(src.clone());
            a.ser.loss_style(g, &b, s, x, &[level]).unwrap()[0]
        });
    }
    with_pred("content", &|g, x| {
        let b = a.content.bind(g);
        let s = g.constant(src.clone());
        a.content.loss_content(g, &b, s, x).unwrap()
    });
    for term in [FakeTerm::Squared, FakeTerm::Unsquared] {
        with_pred(&format!("real_fake_{term:?}"), &|g, x| {
            let b = m.disc.bind(g);
            let s = g.constant(src.clone());
            let dr = m.disc.score_in(g, &b, s).unwrap();
            let df = m.disc.score_in(g, &b, x).unwrap();
            loss_real_fake(g, dr, df, term).unwrap()
        });
    }
    with_pred("adv", &|g, x| {
        let b = m.disc.bind(g);
        let d = m.disc.score_in(g, &b, x).unwrap();
        loss_adv(g, d).unwrap()
    });
    for (name, value) in m.disc.params.iter() {
        results.push(check(&format!("real_fake wrt disc.{name}"), value, |g, x| {
            let b = m.disc.params.bind(g, false).with_var(name, x);
            let s = g.constant(src.clone());
            let dr = m.disc.score_in(g, &b, s).unwrap();
            let df = {
                let p = g.constant(pred.clone());
                m.disc.score_in(g, &b, p).unwrap()
            };
            loss_real_fake(g, dr, df, FakeTerm::Squared).unwrap()
        }));
    }
    let base = TrainingConfig::base_published();
    let adapt = adapt_cfg();
    let objectives: [(&str, &dyn Fn(&mut Graph, &Session) -> Var); 4] = [
        ("wreg", &|g, s| {
            loss_weight_reg(g, &s.vc_b, &m.vc.params, &m.anchor, 0.01).unwrap()
        }),
        ("recon alpha=0", &|g, s| loss_recon(g, s, &m.recon(), &base).unwrap().total),
        ("recon alpha=1", &|g, s| loss_recon(g, s, &m.recon(), &adapt).unwrap().total),
        ("simu", &|g, s| loss_simu(g, s, &m.simu(), &adapt).unwrap().total),
    ];
    for (label, obj) in objectives {
        for (name, value) in m.vc.params.iter() {
            results.push(check(&format!("{label} wrt {name}"), value, |g, x| {
                let mut s = Session::bind(g, &m.vc, false, a, &m.disc, Some(&m.anchor)).unwrap();
                s.vc_b = s.vc_b.clone().with_var(name, x);
                obj(g, &s)
            }));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let failures: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    let worst = results
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .fold(0.0f64, |m, &e| m.max(e));
    let pass = failures.is_empty() && secs < 30.0;
    let detail = if failures.is_empty() {
        format!("{} checks, worst rel err {worst:.2e}, {secs:.1} s (< 30 s)", results.len())
    } else {
        format!("{} of {} checks failed: {:?}", failures.len(), results.len(), failures)
    };
    vec![line("1", "gradient integrity of every loss term", pass, detail)]
}

fn criterion_2() -> Vec<Line> {
    let m = micro();
    let mut fails = Vec::new();
    let mut expect = |cond: bool, what: &str| {
        if !cond {
            fails.push(what.to_string());
        }
    };
    let breakdown = |cfg: &TrainingConfig, simu: bool| -> (LossBreakdown, f64) {
        let mut g = Graph::new();
        let s = Session::bind(&mut g, &m.vc, true, &m.aux, &m.disc, Some(&m.anchor)).unwrap();
        let o = if simu {
            loss_simu(&mut g, &s, &m.simu(), cfg).unwrap()
        } else {
            loss_recon(&mut g, &s, &m.recon(), cfg).unwrap()
        };
        (o.breakdown, g.item(o.total))
    };

    let base = TrainingConfig::base_published();
    let adapt = adapt_cfg();
    let (b0, t0) = breakdown(&base, false);
    let (b1, t1) = breakdown(&adapt, false);
    let (bs, ts) = breakdown(&adapt, true);
    expect(b0.spk_ce.is_some() && b0.spk_cos.is_none() && b0.wreg.is_none(), "alpha=0 terms");
    expect(b1.spk_ce.is_none() && b1.spk_cos.is_some() && b1.wreg.is_some(), "alpha=1 terms");
    let w0 = Weights::recon(&base).unwrap();
    let w1 = Weights::recon(&adapt).unwrap();
    expect((w0.spk_ce, w0.spk_cos, w0.wreg) == (1.0, 0.0, 0.0), "alpha=0 weights");
    expect((w1.spk_ce, w1.spk_cos, w1.wreg) == (0.0, 0.1, 1.0), "alpha=1 weights");
    expect(
        bs.mel.is_none() && bs.style_l.is_none() && bs.style_m.is_some() && bs.style_h.is_some(),
        "simulation excludes mel and low-level style",
    );
    let ws = Weights::simu(&adapt).unwrap();
    expect(ws.mel == 0.0 && ws.style_l == 0.0, "simulation weights");
    expect((b0.weighted(&w0) - t0).abs() <= EXACT, "alpha=0 total");
    expect((b1.weighted(&w1) - t1).abs() <= EXACT, "alpha=1 total");
    expect((bs.weighted(&ws) - ts).abs() <= EXACT, "simulation total");
    expect(b0.total_recon == Some(t0) && bs.total_simu == Some(ts), "recorded totals");

    let triplet = |a: [f64; 2], p: [f64; 2], n: &[[f64; 2]]| {
        let mut g = Graph::new();
        let av = g.constant(Tensor::row(a.to_vec()));
        let pv = g.constant(Tensor::row(p.to_vec()));
        let nv: Vec<Var> = n.iter().map(|x| g.constant(Tensor::row(x.to_vec()))).collect();
        let l = loss_triplet(&mut g, av, pv, &nv).unwrap();
        g.item(l)
    };
    let h1 = triplet([1.0, 0.0], [1.0, 0.0], &[[0.0, 1.0]]);
    let h2 = triplet([1.0, 0.0], [0.0, 1.0], &[[1.0, 0.0]]);
    let h3 = triplet([1.0, 1.0], [1.0, 0.0], &[[0.0, 1.0], [-1.0, 0.0]]);
    let want3 = 1.0 - 1.0 / 2f64.sqrt();
    expect(h1.abs() <= EXACT, "triplet hand value 0");
    expect((h2 - 2.0).abs() <= EXACT, "triplet hand value 2");
    expect((h3 - want3).abs() <= EXACT, "triplet hand value 0.29289");
    let pass = fails.is_empty();
    let detail = if pass {
        format!(
            "alpha switch, simulation exclusions, totals within 1e-12, triplet = {h1}, {h2}, {h3:.5}"
        )
    } else {
        format!("failed: {fails:?}")
    };
    vec![line("2", "loss-structure unit suite", pass, detail)]
}

// ---------------------------------------------------------------------------
// Pipeline-backed criteria
// ---------------------------------------------------------------------------

struct Pipeline {
    dir: PathBuf,
    secs: BTreeMap<&'static str, f64>,
    aux_hash: Option<String>,
    failure: Option<String>,
}

impl Pipeline {
    fn run(dir: PathBuf) -> Self {
        let mut p = Pipeline {
            dir,
            secs: BTreeMap::new(),
            aux_hash: None,
            failure: None,
        };
        for (stage, args) in [
            ("gen-corpus", vec!["gen-corpus"]),
            ("pretrain", vec!["pretrain"]),
            ("train-base", vec!["train-base"]),
            ("adapt", vec!["adapt"]),
            ("eval", vec!["eval", "--csv"]),
        ] {
            eprintln!("[acceptance] mfc {stage}");
            let (code, err, secs) = mfc(&p.dir, &args, &[]);
            p.secs.insert(stage, secs);
            if code != 0 {
                p.failure = Some(format!("mfc {stage} exited {code}: {}", err.trim()));
                return p;
            }
            if stage == "pretrain" {
                p.aux_hash = Some(file_hash(&p.dir.join("auxiliaries.ckpt")));
            }
        }
        p
    }

    fn total(&self) -> f64 {
        self.secs.values().sum()
    }

    fn require(&self) {
        if let Some(f) = &self.failure {
            panic!("pipeline failed: {f}");
        }
    }

    fn eval(&self, n: usize) -> EvalReport {
        read_json(&self.dir.join(format!("reports/eval_full_n{n}.json")))
    }
}

fn criterion_3(p: &Pipeline) -> Vec<Line> {
    p.require();
    let t0 = Instant::now();
    let corpus = Corpus::load(&p.dir.join("corpus")).unwrap();
    let aux = Auxiliaries::load(&p.dir.join("auxiliaries.ckpt")).unwrap();
    let held = corpus.test();
    let targets: Vec<&Utterance> = corpus
        .split_indices(Split::TargetEval)
        .into_iter()
        .chain(corpus.split_indices(Split::Adapt))
        .map(|i| &corpus.utterances[i])
        .collect();
    let a = speaker_model_table(&aux, &held).unwrap();
    let b = speaker_model_table(&aux, &targets).unwrap();
    let secs = p.secs["pretrain"] + t0.elapsed().as_secs_f64();
    let ok = |t: &mfc_core::eval::SpeakerModelTable| {
        t.indicator.intra.unwrap() >= 0.9
            && t.indicator.inter.unwrap() <= 0.3
            && t.indicator.gap().unwrap() > t.classifier.gap().unwrap()
    };
    let pass = ok(&a) && ok(&b) && secs < 180.0;
    let fmt = |t: &mfc_core::eval::SpeakerModelTable| {
        format!(
            "indicator intra {:.3} inter {:.3} gap {:.3}, classifier gap {:.3}",
            t.indicator.intra.unwrap(),
            t.indicator.inter.unwrap(),
            t.indicator.gap().unwrap(),
            t.classifier.gap().unwrap()
        )
    };
    vec![line(
        "3",
        "speaker indicator geometry",
        pass,
        format!(
            "held-out base utts: {}; unseen targets: {}; {secs:.1} s (< 180 s)",
            fmt(&a),
            fmt(&b)
        ),
    )]
}

fn criterion_4(p: &Pipeline) -> Vec<Line> {
    p.require();
    let r = p.eval(1);
    let per_target_secs = p.secs["adapt"] / r.targets.len() as f64;
    let mut gains = Vec::new();
    for base in &r.base {
        let runs: Vec<f64> = r
            .runs
            .iter()
            .filter(|x| x.target == base.target)
            .map(|x| x.metrics.conversion.cos_sim)
            .collect();
        let adapted = runs.iter().sum::<f64>() / runs.len() as f64;
        gains.push((base.target, base.metrics.conversion.cos_sim, adapted));
    }
    let pass = gains.len() == 4 && gains.iter().all(|(_, b, a)| a - b >= 0.2) && per_target_secs < 300.0;
    let detail = gains
        .iter()
        .map(|(t, b, a)| format!("spk {t}: {b:.3} -> {a:.3} (+{:.3})", a - b))
        .collect::<Vec<_>>()
        .join("; ");
    vec![line(
        "4",
        "adaptation raises Cos.Sim by >= 0.2 per target",
        pass,
        format!("{detail}; {per_target_secs:.0} s per target (< 300 s)"),
    )]
}

fn criterion_5(p: &Pipeline, work: &Path) -> Vec<Line> {
    p.require();
    let cfg = work.join("ablate.json");
    std::fs::write(&cfg, r#"{"ablate_utts": [1]}"#).unwrap();
    eprintln!("[acceptance] mfc ablate");
    let (code, err, _) = mfc(&p.dir, &["--config", cfg.to_str().unwrap(), "ablate", "--csv"], &[]);
    assert_eq!(code, 0, "mfc ablate failed: {err}");
    let r: AblationReport = read_json(&p.dir.join("reports/ablation.json"));
    let row = |v: &str| r.row(v, 1).unwrap_or_else(|| panic!("missing row {v}")).summary.clone();
    let full = row("full");
    let cmp = |id, title, ours: f64, theirs: f64, lower: bool, what: &str, other: &str| {
        let (pass, sym) = match (lower, ours < theirs, ours > theirs) {
            (true, true, _) => (true, "<"),
            (true, false, _) => (false, ">="),
            (false, _, true) => (true, ">"),
            (false, _, false) => (false, "<="),
        };
        line(id, title, pass, format!("{what}: full {ours:.6} {sym} {other} {theirs:.6}"))
    };
    let no_style = row("no_style");
    let no_content = row("no_content");
    let no_spk = row("no_spk");
    let no_sim = row("no_simulation");
    vec![
        cmp("5a", "D_style full < w/o L_style", full.d_style, no_style.d_style, true, "D_style", "w/o L_style"),
        cmp(
            "5b",
            "content error full < w/o L_content",
            full.content_error_rate,
            no_content.content_error_rate,
            true,
            "content error",
            "w/o L_content",
        ),
        cmp("5c", "Cos.Sim full > w/o L_spk", full.cos_sim, no_spk.cos_sim, false, "Cos.Sim", "w/o L_spk"),
        cmp(
            "5d",
            "D_style full < w/o simulation",
            full.d_style,
            no_sim.d_style,
            true,
            "D_style",
            "w/o simulation",
        ),
    ]
}

fn criterion_6(p: &Pipeline) -> Vec<Line> {
    p.require();
    for args in [["adapt", "--utts", "5"], ["eval", "--utts", "5"]] {
        eprintln!("[acceptance] mfc {}", args.join(" "));
        let (code, err, _) = mfc(&p.dir, &args, &[]);
        assert_eq!(code, 0, "mfc {} failed: {err}", args[0]);
    }
    let one = p.eval(1).summary.cos_sim;
    let five = p.eval(5).summary.cos_sim;
    vec![line(
        "6",
        "5-utterance Cos.Sim >= 1-utterance Cos.Sim",
        five >= one,
        format!("5 utt {five:.4} vs 1 utt {one:.4}"),
    )]
}

fn criterion_7(p: &Pipeline) -> Vec<Line> {
    p.require();
    let s = p.eval(1).summary;
    let pass = s.p_lf0 >= 0.7 && s.self_p_lf0 >= 0.95;
    vec![line(
        "7",
        "style preservation (P_lf0)",
        pass,
        format!(
            "converted P_lf0 {:.4} (>= 0.7), self-conversion P_lf0 {:.4} (>= 0.95)",
            s.p_lf0, s.self_p_lf0
        ),
    )]
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_8(p: &Pipeline, work: &Path) -> Vec<Line> {
    p.require();
    let mut notes = Vec::new();
    let aux_path = p.dir.join("auxiliaries.ckpt");
    let file_ok = p.aux_hash.as_deref() == Some(file_hash(&aux_path).as_str());
    notes.push(format!("auxiliary file unchanged by later stages: {file_ok}"));

    let corpus = Corpus::load(&p.dir.join("corpus")).unwrap();
    let aux = Auxiliaries::load(&aux_path).unwrap();
    let before = aux.digests();
    let cache = ContentCache::build(&corpus, &aux).unwrap();
    let cfg = TrainingConfig {
        epochs: 1,
        ..TrainingConfig::toy_base()
    };
    let base = train_base(&corpus, &aux, &cache, &cfg, &VcConfig::default(), &mut |_| {}).unwrap();
    let disc_before = base.disc.params.digest();
    let target = corpus.target_speaker_ids()[0];
    let acfg = TrainingConfig {
        epochs: 3,
        ..TrainingConfig::toy_adapt(1)
    };
    adapt(&base, &aux, &corpus, &cache, target, 1, &acfg, &mut |_| {}).unwrap();
    let frozen_ok = aux.digests() == before && base.disc.params.digest() == disc_before;
    notes.push(format!("in-memory auxiliary and discriminator digests unchanged: {frozen_ok}"));
    let loaded = BaseModel::from_checkpoint(&Checkpoint::load(&p.dir.join("base.ckpt")).unwrap()).is_ok();

    let cfg_path = work.join("det.json");
    std::fs::write(
        &cfg_path,
        r#"{"seeds": [1, 2], "targets": [20, 21], "eval_sources": 5,
            "pretrain": {"asr_steps": 20, "content_steps": 20, "ser_steps": 20,
                         "classifier_steps": 20, "indicator_steps": 20},
            "base": {"epochs": 1}, "adapt": {"epochs": 4}}"#,
    )
    .unwrap();
    let mut trees = Vec::new();
    for (name, threads) in [("det_a", "1"), ("det_b", "2")] {
        let dir = work.join(name);
        for stage in ["gen-corpus", "pretrain", "train-base", "adapt", "eval"] {
            let (code, err, _) =
                mfc(&dir, &["--config", cfg_path.to_str().unwrap(), stage, "--csv"], &[("MFC_THREADS", threads)]);
            assert_eq!(code, 0, "{name} {stage}: {err}");
        }
        trees.push(tree(&dir));
    }
    let identical = trees[0] == trees[1];
    notes.push(format!("{} artifacts bit-identical across two runs: {identical}", trees[0].len()));
    vec![line(
        "8",
        "frozen-model and determinism contracts",
        file_ok && frozen_ok && identical && loaded,
        notes.join("; "),
    )]
}

use mfc_core::checkpoint::Checkpoint;

fn criterion_9(p: &Pipeline) -> Vec<Line> {
    let total = p.total();
    let stages = p
        .secs
        .iter()
        .map(|(k, v)| format!("{k} {v:.0} s"))
        .collect::<Vec<_>>()
        .join(", ");
    let (pass, detail) = match &p.failure {
        Some(f) => (false, f.clone()),
        None => (total < 900.0, format!("{total:.0} s (< 900 s): {stages}")),
    };
    vec![line("9", "end-to-end pipeline budget", pass, detail)]
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let only: Option<Vec<String>> = std::env::var("MFC_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|x| x.trim().to_string()).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let work = tempfile::tempdir().expect("work dir");
    let t0 = Instant::now();
    let mut lines = Vec::new();
    if wanted("1") {
        lines.extend(guarded("1", "gradient integrity of every loss term", criterion_1));
    }
    if wanted("2") {
        lines.extend(guarded("2", "loss-structure unit suite", criterion_2));
    }
    if ["3", "4", "5", "6", "7", "8", "9"].iter().any(|id| wanted(id)) {
        let pipeline = Pipeline::run(work.path().join("run"));
        let p = &pipeline;
        let dir = work.path();
        let stages: [(&'static str, &'static str, Box<dyn Fn() -> Vec<Line> + '_>); 7] = [
            ("3", "speaker indicator geometry", Box::new(|| criterion_3(p))),
            ("4", "adaptation raises Cos.Sim by >= 0.2 per target", Box::new(|| criterion_4(p))),
            ("7", "style preservation (P_lf0)", Box::new(|| criterion_7(p))),
            ("9", "end-to-end pipeline budget", Box::new(|| criterion_9(p))),
            ("6", "5-utterance Cos.Sim >= 1-utterance Cos.Sim", Box::new(|| criterion_6(p))),
            ("5", "ablation directions", Box::new(|| criterion_5(p, dir))),
            ("8", "frozen-model and determinism contracts", Box::new(|| criterion_8(p, dir))),
        ];
        for (id, title, f) in stages {
            if wanted(id) {
                lines.extend(guarded(id, title, f));
            }
        }
    }
    lines.sort_by(|a, b| a.id.cmp(b.id));

    println!();
    for l in &lines {
        println!(
            "{} [{}] {}: {}",
            if l.pass { "PASS" } else { "FAIL" },
            l.id,
            l.title,
            l.detail
        );
    }
    let passed = lines.iter().filter(|l| l.pass).count();
    println!(
        "acceptance: {passed}/{} passed in {:.0} s",
        lines.len(),
        t0.elapsed().as_secs_f64()
    );
    let strict = std::env::var("MFC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < lines.len() {
        std::process::exit(1);
    }
}
