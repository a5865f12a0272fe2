use std::collections::BTreeMap;

use super::*;
use crate::constraints::{
    AsrStandin, Auxiliaries, Auxiliary, ContentModel, Discriminator, Ser, SpeakerClassifier,
    SpeakerEmbedding, SpeakerIndicator,
};
use crate::params::ParamSet;
use crate::synthcorpus::{Utterance, BINS};
use crate::vcmodel::{ContentFeatures, VcConfig, VcModel};
use crate::{grad_check, Error, Graph, Tensor};

fn frozen_aux() -> Auxiliaries {
    let mut a = Auxiliaries {
        asr: AsrStandin::new(1).unwrap(),
        content: ContentModel::new(2).unwrap(),
        ser: Ser::new(3).unwrap(),
        indicator: SpeakerIndicator::new(4).unwrap(),
        classifier: SpeakerClassifier::new(vec![0, 1, 2], 5).unwrap(),
    };
    a.asr.freeze();
    a.content.freeze();
    a.ser.freeze();
    a.indicator.freeze();
    a.classifier.freeze();
    a
}

fn frozen_disc() -> Discriminator {
    let mut d = Discriminator::new(6).unwrap();
    d.freeze();
    d
}

fn micro_utt(frames: usize, speaker: u32, phase: f64) -> Utterance {
    let mel = Tensor::matrix(
        frames,
        BINS,
        (0..frames * BINS).map(|i| (i as f64 * 0.37 + phase).sin()).collect(),
    )
    .unwrap();
    Utterance {
        mel,
        lf0: (0..frames).map(|t| (t as f64 + phase).cos()).collect(),
        energy: (0..frames).map(|t| 0.5 + 0.1 * t as f64).collect(),
        content: vec![3; frames.div_ceil(4)],
        speaker_id: speaker,
        style_class: 1,
    }
}

fn feats(frames: usize, phase: f64) -> ContentFeatures {
    ContentFeatures::new(
        Tensor::matrix(frames, 12, (0..frames * 12).map(|i| (i as f64 * 0.21 + phase).cos()).collect())
            .unwrap(),
    )
    .unwrap()
}

fn spk(k: f64) -> SpeakerEmbedding {
    SpeakerEmbedding((0..16).map(|i| ((i + 1) as f64 * k).sin()).collect())
}

fn adapt_cfg() -> TrainingConfig {
    TrainingConfig::adapt_published(1)
}

#[test]
fn published_constants_are_the_defaults() {
    let b = TrainingConfig::default();
    assert_eq!((b.alpha, b.lambda_c, b.lambda_adv), (0.0, 1.0, 0.05));
    assert_eq!((b.lr_init, b.lr_decay, b.decay_every, b.epochs), (5e-5, 0.5, 30, 400));
    assert_eq!(b.disc_update_every, 1);
    let a = TrainingConfig::adapt_published(1);
    assert_eq!((a.alpha, a.lambda_spk, a.lambda_c, a.lambda_adv), (1.0, 0.1, 0.1, 0.05));
    assert_eq!(a.simu_batch, 10);
    assert_eq!(TrainingConfig::adapt_published(5).simu_batch, 25);
    assert_eq!(TrainingConfig::toy_base().epochs, 40);
    assert_eq!(TrainingConfig::toy_adapt(1).epochs, 200);
}

#[test]
fn learning_rate_schedule() {
    let c = TrainingConfig::default();
    assert_eq!(c.lr(0), 5e-5);
    assert_eq!(c.lr(29), 5e-5);
    assert_eq!(c.lr(30), 2.5e-5);
    assert_eq!(c.lr(60), 1.25e-5);
    assert_eq!(lr_at(1.0, 0.5, 30, 399), 0.5f64.powi(13));
}

#[test]
fn alpha_must_be_binary() {
    let c = TrainingConfig {
        alpha: 0.5,
        ..TrainingConfig::default()
    };
    assert!(matches!(c.validate(), Err(Error::Contract(_))));
    assert!(matches!(Weights::recon(&c), Err(Error::Contract(_))));
    let c = TrainingConfig {
        lambda_c: -1.0,
        ..TrainingConfig::default()
    };
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn alpha_switches_recon_terms() {
    let w0 = Weights::recon(&TrainingConfig::base_published()).unwrap();
    assert_eq!((w0.spk_cos, w0.wreg, w0.spk_ce), (0.0, 0.0, 1.0));
    let w1 = Weights::recon(&adapt_cfg()).unwrap();
    assert_eq!((w1.spk_ce, w1.spk_cos, w1.wreg), (0.0, 0.1, 1.0));
    assert_eq!((w1.mel, w1.content, w1.adv), (1.0, 0.1, 0.05));
    assert_eq!((w1.style_l, w1.style_m, w1.style_h), (1.0, 1.0, 1.0));
}

#[test]
fn simulation_weights_exclude_mel_and_low_level_style() {
    let w = Weights::simu(&adapt_cfg()).unwrap();
    assert_eq!((w.mel, w.style_l, w.spk_ce, w.wreg), (0.0, 0.0, 0.0, 0.0));
    assert_eq!((w.spk_cos, w.content, w.style_m, w.style_h, w.adv), (0.1, 0.1, 1.0, 1.0, 0.05));
}

#[test]
fn perfect_reconstruction_with_zero_weights_totals_zero() {
    let cfg = TrainingConfig {
        lambda_spk: 0.0,
        lambda_c: 0.0,
        lambda_adv: 0.0,
        ..TrainingConfig::base_published()
    };
    let b = LossBreakdown {
        mel: Some(0.0),
        spk_ce: Some(0.0),
        content: Some(0.0),
        style_l: Some(0.0),
        style_m: Some(0.0),
        style_h: Some(0.0),
        adv: Some(0.8),
        spk_cos: Some(0.7),
        wreg: Some(3.0),
        ..LossBreakdown::default()
    };
    assert_eq!(b.weighted(&Weights::recon(&cfg).unwrap()), 0.0);
}

struct Fixture {
    vc: VcModel,
    aux: Auxiliaries,
    disc: Discriminator,
    utts: Vec<Utterance>,
    feats: Vec<ContentFeatures>,
    speakers: Vec<SpeakerEmbedding>,
}

fn fixture(frames: usize) -> Fixture {
    Fixture {
        vc: VcModel::new(VcConfig::default()).unwrap(),
        aux: frozen_aux(),
        disc: frozen_disc(),
        utts: vec![micro_utt(frames, 1, 0.0), micro_utt(frames, 2, 0.9)],
        feats: vec![feats(frames, 0.0), feats(frames, 1.3)],
        speakers: vec![spk(0.3), spk(0.8)],
    }
}

fn recon_items(f: &Fixture) -> Vec<ReconItem<'_>> {
    (0..2)
        .map(|i| ReconItem {
            utt: &f.utts[i],
            content: &f.feats[i],
            speaker: &f.speakers[i],
            dropout_seed: Some(i as u64),
        })
        .collect()
}

fn simu_items(f: &Fixture) -> Vec<SimuItem<'_>> {
    (0..2)
        .map(|i| SimuItem {
            source: &f.utts[i],
            content: &f.feats[i],
            target_id: 20,
            target: &f.speakers[1 - i],
        })
        .collect()
}

fn recon_value(f: &Fixture, cfg: &TrainingConfig, anchor: Option<&ParamSet>) -> LossBreakdown {
    let mut g = Graph::new();
    let s = Session::bind(&mut g, &f.vc, true, &f.aux, &f.disc, anchor).unwrap();
    loss_recon(&mut g, &s, &recon_items(f), cfg).unwrap().breakdown
}

#[test]
fn recon_breakdown_follows_alpha() {
    let f = fixture(8);
    let b0 = recon_value(&f, &TrainingConfig::base_published(), None);
    assert!(b0.spk_ce.is_some() && b0.spk_cos.is_none() && b0.wreg.is_none());
    let w0 = Weights::recon(&TrainingConfig::base_published()).unwrap();
    assert!((b0.total_recon.unwrap() - b0.weighted(&w0)).abs() <= 1e-12);

    let anchor = f.vc.params.clone();
    let b1 = recon_value(&f, &adapt_cfg(), Some(&anchor));
    assert!(b1.spk_ce.is_none() && b1.spk_cos.is_some());
    assert_eq!(b1.wreg, Some(0.0));
    let w1 = Weights::recon(&adapt_cfg()).unwrap();
    assert!((b1.total_recon.unwrap() - b1.weighted(&w1)).abs() <= 1e-12);
    assert!(b1.total_simu.is_none());
}

#[test]
fn adaptation_recon_requires_base_parameters() {
    let f = fixture(8);
    let mut g = Graph::new();
    let s = Session::bind(&mut g, &f.vc, true, &f.aux, &f.disc, None).unwrap();
    assert!(matches!(
        loss_recon(&mut g, &s, &recon_items(&f), &adapt_cfg()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn simu_breakdown_has_no_mel_or_low_level_style() {
    let f = fixture(8);
    let mut g = Graph::new();
    let s = Session::bind(&mut g, &f.vc, true, &f.aux, &f.disc, None).unwrap();
    let b = loss_simu(&mut g, &s, &simu_items(&f), &adapt_cfg()).unwrap().breakdown;
    assert!(b.mel.is_none() && b.style_l.is_none() && b.spk_ce.is_none() && b.wreg.is_none());
    assert!(b.total_recon.is_none());
    let w = Weights::simu(&adapt_cfg()).unwrap();
    assert!((b.total_simu.unwrap() - b.weighted(&w)).abs() <= 1e-12);

    let zero = TrainingConfig {
        lambda_spk: 0.0,
        lambda_c: 0.0,
        lambda_adv: 0.0,
        ..adapt_cfg()
    };
    let mut g = Graph::new();
    let s = Session::bind(&mut g, &f.vc, true, &f.aux, &f.disc, None).unwrap();
    let b = loss_simu(&mut g, &s, &simu_items(&f), &zero).unwrap().breakdown;
    assert_eq!(b.total_simu.unwrap(), b.style_m.unwrap() + b.style_h.unwrap());
}

#[test]
fn simu_rejects_source_of_the_target_speaker() {
    let f = fixture(8);
    let mut items = simu_items(&f);
    items[1].target_id = f.utts[1].speaker_id;
    let mut g = Graph::new();
    let s = Session::bind(&mut g, &f.vc, true, &f.aux, &f.disc, None).unwrap();
    assert!(matches!(loss_simu(&mut g, &s, &items, &adapt_cfg()), Err(Error::Contract(_))));
}

#[test]
fn simu_ignores_every_ground_truth_mel_but_the_source() {
    let f = fixture(8);
    let run = |f: &Fixture| {
        let mut g = Graph::new();
        let s = Session::bind(&mut g, &f.vc, true, &f.aux, &f.disc, None).unwrap();
        let items = &simu_items(f)[..1];
        loss_simu(&mut g, &s, items, &adapt_cfg()).unwrap().breakdown
    };
    let before = run(&f);
    let mut f2 = fixture(8);
    f2.utts[1].mel = f2.utts[1].mel.map(|v| v * 3.0 - 1.0);
    assert_eq!(run(&f2), before);
}

#[test]
fn weight_regularization_values() {
    let mut a = ParamSet::new();
    a.insert("x", Tensor::scalar(1.0)).unwrap();
    let mut b = a.clone();
    let eval = |p: &ParamSet, anchor: &ParamSet| {
        let mut g = Graph::new();
        let bound = p.bind(&mut g, true);
        let l = loss_weight_reg(&mut g, &bound, p, anchor, 0.01).unwrap();
        g.item(l)
    };
    assert_eq!(eval(&a, &a), 0.0);
    *b.get_mut("x").unwrap() = Tensor::scalar(3.0);
    assert!((eval(&b, &a) - 0.04).abs() < 1e-15);

    let mut other = ParamSet::new();
    other.insert("y", Tensor::scalar(1.0)).unwrap();
    let mut g = Graph::new();
    let bound = a.bind(&mut g, true);
    assert!(matches!(
        loss_weight_reg(&mut g, &bound, &a, &other, 0.01),
        Err(Error::Contract(_))
    ));
}

#[test]
fn weight_regularization_gradient_pulls_toward_base() {
    let f = fixture(4);
    let anchor = f.vc.params.clone();
    let mut moved = f.vc.params.clone();
    for (_, t) in moved.iter_mut() {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += 0.1 * ((i % 7) as f64 - 3.0);
        }
    }
    let dist = |p: &ParamSet| -> f64 {
        p.iter()
            .map(|(n, t)| {
                t.data()
                    .iter()
                    .zip(anchor.get(n).unwrap().data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum()
    };
    let mut g = Graph::new();
    let bound = moved.bind(&mut g, true);
    let l = loss_weight_reg(&mut g, &bound, &moved, &anchor, 0.01).unwrap();
    let mut grads = g.backward(l).unwrap();
    let grads = bound.collect(&g, &mut grads);
    let before = dist(&moved);
    for (n, t) in moved.iter_mut() {
        for (v, d) in t.data_mut().iter_mut().zip(grads[n].data()) {
            *v -= 100.0 * d;
        }
    }
    assert!(dist(&moved) < before);
}

fn grads_of(f: &Fixture, cfg: &TrainingConfig, anchor: Option<&ParamSet>) -> BTreeMap<String, Tensor> {
    let mut g = Graph::new();
    let s = Session::bind(&mut g, &f.vc, true, &f.aux, &f.disc, anchor).unwrap();
    let obj = loss_recon(&mut g, &s, &recon_items(f), cfg).unwrap();
    let mut grads = g.backward(obj.total).unwrap();
    s.vc_b.collect(&g, &mut grads)
}

#[test]
fn alpha_zero_gradient_ignores_speaker_cosine_and_weight_penalty() {
    let f = fixture(8);
    let a = grads_of(&f, &TrainingConfig::base_published(), None);
    let b = grads_of(
        &f,
        &TrainingConfig {
            lambda_spk: 7.0,
            weight_reg: 3.0,
            ..TrainingConfig::base_published()
        },
        Some(&f.vc.params),
    );
    assert_eq!(a, b);
}

#[test]
fn alpha_one_gradient_ignores_the_classifier() {
    let mut f = fixture(8);
    let anchor = f.vc.params.clone();
    let a = grads_of(&f, &adapt_cfg(), Some(&anchor));
    f.aux.classifier = SpeakerClassifier::new(vec![0, 1, 2], 99).unwrap();
    f.aux.classifier.freeze();
    let b = grads_of(&f, &adapt_cfg(), Some(&anchor));
    assert_eq!(a, b);
}

fn check_all_params(
    f: &Fixture,
    anchor: &ParamSet,
    objective: &dyn Fn(&mut Graph, &Session) -> crate::Result<crate::Var>,
) {
    for (name, value) in f.vc.params.iter() {
        let report = grad_check(
            |g, x| {
                let mut s = Session::bind(g, &f.vc, false, &f.aux, &f.disc, Some(anchor)).unwrap();
                s.vc_b = s.vc_b.clone().with_var(name, x);
                Ok(objective(g, &s).unwrap())
            },
            value,
            1e-5,
            1e-4,
        );
        assert!(report.pass, "{name}: {report:?}");
    }
}

#[test]
fn recon_and_simu_gradients_match_finite_differences() {
    let mut f = fixture(4);
    for (_, t) in f.vc.params.iter_mut() {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += 0.01 * ((i % 5) as f64 - 2.0);
        }
    }
    let anchor = {
        let mut a = f.vc.params.clone();
        for (_, t) in a.iter_mut() {
            for v in t.data_mut() {
                *v *= 0.9;
            }
        }
        a
    };
    let base = TrainingConfig::base_published();
    check_all_params(&f, &anchor, &|g, s| Ok(loss_recon(g, s, &recon_items(&f), &base)?.total));
    let adapt = adapt_cfg();
    check_all_params(&f, &anchor, &|g, s| Ok(loss_recon(g, s, &recon_items(&f), &adapt)?.total));
    check_all_params(&f, &anchor, &|g, s| Ok(loss_simu(g, s, &simu_items(&f), &adapt)?.total));
}
