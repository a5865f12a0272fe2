use super::*;
use crate::grad_check;

fn content(t: usize, f: impl Fn(usize, usize) -> f64) -> ContentFeatures {
    let data = (0..t * CONTENT_DIM).map(|i| f(i / CONTENT_DIM, i % CONTENT_DIM)).collect();
    ContentFeatures::new(Tensor::matrix(t, CONTENT_DIM, data).unwrap()).unwrap()
}

fn wave(t: usize, k: f64) -> Vec<f64> {
    (0..t).map(|i| (i as f64 * k).sin()).collect()
}

fn speaker(k: f64) -> SpeakerEmbedding {
    SpeakerEmbedding((0..EMBED_DIM).map(|i| ((i as f64 + 1.0) * k).cos()).collect())
}

fn model() -> VcModel {
    VcModel::new(VcConfig::default()).unwrap()
}

#[test]
fn style_shapes_follow_frame_count() {
    let m = model();
    let s = m
        .extract_styles(&content(80, |t, c| (t + c) as f64 * 0.01), &wave(80, 0.1), &wave(80, 0.2))
        .unwrap();
    assert_eq!(s.global.shape(), [1, 8]);
    assert_eq!(s.local.shape(), [20, 8]);
    assert_eq!(s.frame.shape(), [80, 2]);
    let s = m
        .extract_styles(&content(81, |_, _| 0.0), &wave(81, 0.1), &wave(81, 0.2))
        .unwrap();
    assert_eq!(s.local.shape(), [21, 8]);
}

#[test]
fn constant_inputs_give_equal_local_rows() {
    let m = model();
    let s = m
        .extract_styles(&content(30, |_, c| c as f64 * 0.1), &[0.4; 30], &[0.2; 30])
        .unwrap();
    for r in 1..s.local.rows() {
        assert_eq!(s.local.row_slice(r), s.local.row_slice(0));
    }
}

#[test]
fn style_extraction_rejects_misaligned_contours() {
    let m = model();
    let c = content(12, |_, _| 0.0);
    assert!(matches!(
        m.extract_styles(&c, &[0.0; 12], &[0.0; 11]),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        m.extract_styles(&c, &[0.0; 10], &[0.0; 10]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn utterances_do_not_contaminate_each_other() {
    let m = model();
    let a = content(16, |t, c| ((t * 3 + c) as f64).sin());
    let b = content(24, |t, c| ((t + 2 * c) as f64).cos());
    let sa = m.extract_styles(&a, &wave(16, 0.3), &wave(16, 0.1)).unwrap();
    let sb = m.extract_styles(&b, &wave(24, 0.2), &wave(24, 0.4)).unwrap();
    let sb2 = m.extract_styles(&b, &wave(24, 0.2), &wave(24, 0.4)).unwrap();
    let sa2 = m.extract_styles(&a, &wave(16, 0.3), &wave(16, 0.1)).unwrap();
    assert_eq!(sa, sa2);
    assert_eq!(sb, sb2);
    let ya = m.convert(&a, &speaker(0.3), &sa, None).unwrap();
    let yb = m.convert(&b, &speaker(0.7), &sb, None).unwrap();
    assert_eq!(m.convert(&a, &speaker(0.3), &sa, None).unwrap(), ya);
    assert_eq!(m.convert(&b, &speaker(0.7), &sb, None).unwrap(), yb);
}

#[test]
fn untrained_model_gives_finite_output_on_zero_inputs() {
    let m = model();
    let c = content(20, |_, _| 0.0);
    let s = m.extract_styles(&c, &[0.0; 20], &[0.0; 20]).unwrap();
    let zero = SpeakerEmbedding(vec![0.0; EMBED_DIM]);
    let y = m.convert(&c, &zero, &s, None).unwrap();
    assert_eq!(y.shape(), [20, BINS]);
    assert!(y.is_finite());
}

#[test]
fn teacher_forcing_changes_the_output() {
    let m = model();
    let c = content(12, |t, c| ((t + c) as f64 * 0.3).sin());
    let s = m.extract_styles(&c, &wave(12, 0.5), &wave(12, 0.2)).unwrap();
    let teacher = Tensor::filled(&[12, BINS], 0.7);
    let forced = m.convert(&c, &speaker(0.2), &s, Some(&teacher)).unwrap();
    let free = m.convert(&c, &speaker(0.2), &s, None).unwrap();
    assert_eq!(forced.row_slice(0), free.row_slice(0));
    assert_ne!(forced, free);

    let flat = VcModel::new(VcConfig {
        autoregressive: false,
        ..VcConfig::default()
    })
    .unwrap();
    assert_eq!(
        flat.convert(&c, &speaker(0.2), &s, Some(&teacher)).unwrap(),
        flat.convert(&c, &speaker(0.2), &s, None).unwrap()
    );
}

#[test]
fn speaker_vector_reaches_the_output() {
    let m = model();
    let c = content(8, |t, c| ((t * c) as f64 * 0.1).cos());
    let s = m.extract_styles(&c, &wave(8, 0.5), &wave(8, 0.2)).unwrap();
    let base = m.convert(&c, &speaker(0.4), &s, None).unwrap();
    let mut nudged = speaker(0.4);
    nudged.0[3] += 1e-3;
    let moved = m.convert(&c, &nudged, &s, None).unwrap();
    let diff: f64 = base.data().iter().zip(moved.data()).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-6, "{diff}");
}

#[test]
fn speaker_dimension_is_checked() {
    let m = model();
    let c = content(8, |_, _| 0.1);
    let s = m.extract_styles(&c, &[0.0; 8], &[0.0; 8]).unwrap();
    let bad = SpeakerEmbedding(vec![1.0; EMBED_DIM - 1]);
    assert!(matches!(m.convert(&c, &bad, &s, None), Err(Error::Contract(_))));
}

#[test]
fn mel_loss_gradients_match_finite_differences() {
    let m = model();
    let c = content(2, |t, c| ((t + 1) as f64 * (c + 1) as f64 * 0.37).sin());
    let frame = Tensor::matrix(2, 2, vec![0.3, -0.2, 0.8, 0.1]).unwrap();
    let target = Tensor::matrix(2, BINS, (0..2 * BINS).map(|i| (i as f64 * 0.29).cos()).collect())
        .unwrap();
    for teacher in [false, true] {
        for (name, value) in m.params.iter() {
            let report = grad_check(
                |g, x| {
                    let b = m.bind(g, false).with_var(name, x);
                    let cv = g.constant(c.tensor().clone());
                    let fv = g.constant(frame.clone());
                    let sv = g.constant(speaker(0.9).to_tensor());
                    let tv = g.constant(target.clone());
                    let styles = m.extract_styles_in(g, &b, cv, fv).unwrap();
                    let mode = if teacher {
                        Decode::TeacherForced(tv)
                    } else {
                        Decode::FreeRunning
                    };
                    let y = m.convert_in(g, &b, cv, sv, &styles, mode).unwrap();
                    g.mse(y, tv)
                },
                value,
                1e-5,
                1e-4,
            );
            assert!(report.pass, "{name} teacher={teacher}: {report:?}");
        }
    }
}
