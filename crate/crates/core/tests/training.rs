//! Base training and adaptation on a tiny corpus with untrained, frozen auxiliaries.

use mfc_core::constraints::{
    AsrStandin, Auxiliaries, Auxiliary, ContentModel, Discriminator, Ser, SpeakerClassifier,
    SpeakerIndicator,
};
use mfc_core::synthcorpus::{build_corpus, derive_seed, Corpus, CorpusConfig};
use mfc_core::trainer::{
    adapt, train_base, ContentCache, LogRecord, Mode, TrainingConfig, Weights,
};
use mfc_core::vcmodel::VcConfig;
use mfc_core::Error;

fn tiny_corpus() -> Corpus {
    build_corpus(
        5,
        &CorpusConfig {
            base_speakers: 3,
            target_speakers: 1,
            utts_per_base: 4,
            adapt_utts: 5,
            target_eval_utts: 2,
            test_utts: 3,
            min_tokens: 10,
            max_tokens: 12,
            ..CorpusConfig::default()
        },
    )
    .unwrap()
}

fn aux(corpus: &Corpus) -> Auxiliaries {
    let mut a = Auxiliaries {
        asr: AsrStandin::new(1).unwrap(),
        content: ContentModel::new(2).unwrap(),
        ser: Ser::new(3).unwrap(),
        indicator: SpeakerIndicator::new(4).unwrap(),
        classifier: SpeakerClassifier::new(corpus.base_speaker_ids(), 5).unwrap(),
    };
    a.asr.freeze();
    a.content.freeze();
    a.ser.freeze();
    a.indicator.freeze();
    a.classifier.freeze();
    a
}

fn base_cfg() -> TrainingConfig {
    TrainingConfig {
        epochs: 2,
        batch_size: 4,
        lr_init: 1e-3,
        ..TrainingConfig::base_published()
    }
}

fn adapt_cfg() -> TrainingConfig {
    TrainingConfig {
        epochs: 3,
        simu_batch: 2,
        lr_init: 1e-3,
        ..TrainingConfig::adapt_published(1)
    }
}

#[test]
fn base_training_is_deterministic_and_leaves_auxiliaries_untouched() {
    let corpus = tiny_corpus();
    let aux = aux(&corpus);
    let digests = aux.digests();
    let cache = ContentCache::build(&corpus, &aux).unwrap();
    let mut log: Vec<LogRecord> = Vec::new();
    let a = train_base(&corpus, &aux, &cache, &base_cfg(), &VcConfig::default(), &mut |r| log.push(r))
        .unwrap();
    let b = train_base(&corpus, &aux, &cache, &base_cfg(), &VcConfig::default(), &mut |_| {}).unwrap();
    assert_eq!(aux.digests(), digests);
    let ha = a.to_checkpoint("cfg", &corpus.hash).hash().unwrap();
    let hb = b.to_checkpoint("cfg", &corpus.hash).hash().unwrap();
    assert_eq!(ha, hb);
    assert!(a.disc.is_frozen());
    assert_eq!(a.steps, 6);

    let w = Weights::recon(&base_cfg()).unwrap();
    let recon: Vec<_> = log.iter().filter(|r| r.mode == Mode::Recon).collect();
    assert_eq!(recon.len(), 6);
    for r in &recon {
        assert!((r.breakdown.total_recon.unwrap() - r.breakdown.weighted(&w)).abs() <= 1e-12);
        assert!(r.breakdown.spk_cos.is_none() && r.breakdown.wreg.is_none());
    }
    assert_eq!(log.iter().filter(|r| r.mode == Mode::Disc).count(), 6);
}

#[test]
fn generator_steps_do_not_touch_the_discriminator_and_vice_versa() {
    let corpus = tiny_corpus();
    let aux = aux(&corpus);
    let cache = ContentCache::build(&corpus, &aux).unwrap();
    let one_step = TrainingConfig {
        epochs: 1,
        batch_size: 100,
        ..base_cfg()
    };
    let never = TrainingConfig {
        disc_update_every: 1000,
        ..one_step.clone()
    };
    let with_d = train_base(&corpus, &aux, &cache, &one_step, &VcConfig::default(), &mut |_| {}).unwrap();
    let without_d = train_base(&corpus, &aux, &cache, &never, &VcConfig::default(), &mut |_| {}).unwrap();
    assert_eq!(with_d.vc.params, without_d.vc.params);

    let two_steps = TrainingConfig {
        epochs: 2,
        disc_update_every: 1000,
        ..one_step
    };
    let run = train_base(&corpus, &aux, &cache, &two_steps, &VcConfig::default(), &mut |_| {}).unwrap();
    let mut after_first = train_base(&corpus, &aux, &cache, &never, &VcConfig::default(), &mut |_| {})
        .unwrap()
        .disc;
    after_first.set_frozen(true);
    assert_eq!(run.disc.params, after_first.params);
    assert_ne!(
        run.disc.params,
        Discriminator::new(derive_seed(base_cfg().seed, 20, 1)).unwrap().params
    );
}

#[test]
fn adaptation_freezes_everything_but_the_conversion_model() {
    let corpus = tiny_corpus();
    let aux = aux(&corpus);
    let cache = ContentCache::build(&corpus, &aux).unwrap();
    let base = train_base(&corpus, &aux, &cache, &base_cfg(), &VcConfig::default(), &mut |_| {}).unwrap();
    let digests = aux.digests();
    let disc = base.disc.params.digest();
    let target = corpus.target_speaker_ids()[0];
    let mut log = Vec::new();
    let a = adapt(&base, &aux, &corpus, &cache, target, 1, &adapt_cfg(), &mut |r| log.push(r)).unwrap();
    assert_eq!(aux.digests(), digests);
    assert_eq!(base.disc.params.digest(), disc);
    assert_ne!(a.vc.params, base.vc.params);
    assert_eq!(log.iter().filter(|r| r.mode == Mode::Simu).count(), 3);
    for r in &log {
        match r.mode {
            Mode::Simu => assert!(r.breakdown.mel.is_none() && r.breakdown.style_l.is_none()),
            Mode::Recon => assert!(r.breakdown.wreg.is_some() && r.breakdown.spk_ce.is_none()),
            Mode::Disc => panic!("discriminator updated during adaptation"),
        }
    }
    let again = adapt(&base, &aux, &corpus, &cache, target, 1, &adapt_cfg(), &mut |_| {}).unwrap();
    assert_eq!(
        a.to_checkpoint("c", "b").hash().unwrap(),
        again.to_checkpoint("c", "b").hash().unwrap()
    );

    let no_sim = adapt(
        &base,
        &aux,
        &corpus,
        &cache,
        target,
        1,
        &TrainingConfig {
            simu_batch: 0,
            ..adapt_cfg()
        },
        &mut |r| assert_eq!(r.mode, Mode::Recon),
    )
    .unwrap();
    assert_ne!(no_sim.vc.params, a.vc.params);
}

#[test]
fn adaptation_rejects_base_speakers_and_unfrozen_auxiliaries() {
    let corpus = tiny_corpus();
    let aux = aux(&corpus);
    let cache = ContentCache::build(&corpus, &aux).unwrap();
    let base = train_base(&corpus, &aux, &cache, &base_cfg(), &VcConfig::default(), &mut |_| {}).unwrap();
    let seen = corpus.base_speaker_ids()[0];
    assert!(matches!(
        adapt(&base, &aux, &corpus, &cache, seen, 1, &adapt_cfg(), &mut |_| {}),
        Err(Error::Contract(_))
    ));
    let mut thawed = aux.clone();
    thawed.ser.set_frozen(false);
    assert!(matches!(
        train_base(&corpus, &thawed, &cache, &base_cfg(), &VcConfig::default(), &mut |_| {}),
        Err(Error::Lifecycle(_))
    ));
}

#[test]
fn checkpoints_round_trip() {
    let corpus = tiny_corpus();
    let aux = aux(&corpus);
    let cache = ContentCache::build(&corpus, &aux).unwrap();
    let base = train_base(&corpus, &aux, &cache, &base_cfg(), &VcConfig::default(), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.ckpt");
    let hash = base.to_checkpoint("cfg", &corpus.hash).save(&path).unwrap();
    let back = mfc_core::trainer::BaseModel::from_checkpoint(
        &mfc_core::checkpoint::Checkpoint::load(&path).unwrap(),
    )
    .unwrap();
    assert_eq!(back.vc.params, base.vc.params);
    assert_eq!(back.adam, base.adam);
    assert_eq!(back.to_checkpoint("cfg", &corpus.hash).hash().unwrap(), hash);

    let target = corpus.target_speaker_ids()[0];
    let a = adapt(&base, &aux, &corpus, &cache, target, 1, &adapt_cfg(), &mut |_| {}).unwrap();
    let c = a.to_checkpoint("cfg", &hash);
    assert_eq!(c.parent_hash.as_deref(), Some(hash.as_str()));
    let back = mfc_core::trainer::AdaptedModel::from_checkpoint(&c).unwrap();
    assert_eq!(back.vc.params, a.vc.params);
    assert_eq!(back.speaker, a.speaker);
}
