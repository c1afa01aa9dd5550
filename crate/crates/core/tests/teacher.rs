mod common;

use common::{random_vec, rng};
use convtts::audio::{MelSpectrogram, Normalization};
use convtts::nn::{no_grad, Adam, LrSchedule, Module, Shape, Tensor};
use convtts::teacher::train::teacher_losses;
use convtts::teacher::{
    augment, durations_from_argmax, extract_durations, guided_attention_loss, guided_attention_term, masked_argmax,
    sequential_generate, sequential_teacher_forced, shift_frames, teacher_training_step, AttentionMatrix,
    AugmentParams, LocationWindow, TeacherBatch, TeacherConfig, TeacherModel,
};
use convtts::Error;
use proptest::prelude::*;
use rand::Rng;

const VOCAB: usize = 20;

fn model(seed: u64) -> TeacherModel {
    TeacherModel::new(TeacherConfig::new(VOCAB), &mut rng(seed)).unwrap()
}

fn unit_mel(r: &mut impl Rng, frames: usize) -> MelSpectrogram {
    let v = (0..80 * frames).map(|_| r.random_range(0.0f32..1.0)).collect();
    MelSpectrogram::new(80, frames, v, Normalization::UnitInterval { min_db: -11.5, max_db: 2.0 }).unwrap()
}

fn ids(r: &mut impl Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| r.random_range(1..VOCAB)).collect()
}

#[test]
fn perturbing_a_frame_only_affects_later_predictions() {
    let m = model(1);
    let mut r = rng(2);
    let p = ids(&mut r, 6);
    let shape = Shape::new(1, 80, 24);
    let base = random_vec(&mut r, shape.numel(), 0.5).iter().map(|v| v + 0.5).collect::<Vec<_>>();
    let run = |x: Vec<f32>| {
        no_grad(|| m.forward(&p, &[6], &Tensor::new(shape, x), &[24], &[0.25]))
            .unwrap()
            .prediction
            .to_vec()
    };
    let y0 = run(base.clone());
    for t in [0usize, 9, 23] {
        let mut x = base.clone();
        for c in 0..80 {
            x[c * 24 + t] = 1.0 - x[c * 24 + t];
        }
        let y1 = run(x);
        for c in 0..80 {
            for s in 0..t {
                assert_eq!(y0[c * 24 + s], y1[c * 24 + s], "frame {s} moved after perturbing {t}");
            }
        }
        assert!((0..80).any(|c| y0[c * 24 + t] != y1[c * 24 + t]));
    }
}

#[test]
fn attention_columns_are_distributions_and_outputs_in_unit_range() {
    let m = model(3);
    let mut r = rng(4);
    let (a, b) = (unit_mel(&mut r, 15), unit_mel(&mut r, 9));
    let (pa, pb) = (ids(&mut r, 7), ids(&mut r, 4));
    let batch = TeacherBatch::new(&[(&pa, &a), (&pb, &b)]).unwrap();
    let shape = batch.shape();
    let input = Tensor::new(shape, shift_frames(&batch.target, shape));
    let out = no_grad(|| m.forward(&batch.ids, &batch.phoneme_lengths, &input, &batch.frame_lengths, &batch.rates()))
        .unwrap();
    for (bi, (&n, &t)) in batch.phoneme_lengths.iter().zip(&batch.frame_lengths).enumerate() {
        let att = AttentionMatrix::from_batch(&out.attention, bi, n, t).unwrap();
        assert!(att.column_sum_error() < 1e-5);
        assert!(att.values.iter().all(|&v| v >= 0.0));
        for p in n..batch.max_phonemes {
            for f in 0..t {
                assert_eq!(out.attention.at(bi, p, f), 0.0);
            }
        }
    }
    assert!(out.prediction.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn zero_projection_gives_mean_of_values() {
    let m = model(5);
    m.key_query.weight.data_mut().fill(0.0);
    m.key_query.bias.data_mut().fill(0.0);
    let mut r = rng(6);
    let p = ids(&mut r, 5);
    let mel = unit_mel(&mut r, 8);
    let shape = Shape::new(1, 80, 8);
    let input = Tensor::new(shape, shift_frames(&mel.values, shape));
    let out = no_grad(|| m.forward(&p, &[5], &input, &[8], &[0.6])).unwrap();
    let memory = no_grad(|| m.encode_phonemes(&p, &[5])).unwrap();
    for c in 0..128 {
        let mean: f64 = (0..5).map(|n| memory.values.at(0, c, n) as f64).sum::<f64>() / 5.0;
        for t in 0..8 {
            assert!((out.context.at(0, c, t) as f64 - mean).abs() < 1e-6);
        }
    }
}

#[test]
fn guided_loss_examples() {
    let ident = AttentionMatrix::new(4, 4, (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
    assert_eq!(guided_attention_loss(&ident, 0.2).unwrap(), 0.0);

    let anti = AttentionMatrix::new(4, 4, (0..16).map(|i| if i % 4 == 3 - i / 4 { 1.0 } else { 0.0 }).collect())
        .unwrap();
    assert!(guided_attention_loss(&anti, 0.2).unwrap() > guided_attention_loss(&ident, 0.2).unwrap());

    let (n, t, g) = (6usize, 11usize, 0.3f64);
    let uniform = AttentionMatrix::new(n, t, vec![1.0 / n as f32; n * t]).unwrap();
    let mut mean_w = 0.0f64;
    for i in 1..=n {
        for j in 1..=t {
            let d = i as f64 / n as f64 - j as f64 / t as f64;
            mean_w += 1.0 - (-d * d / (2.0 * g * g)).exp();
        }
    }
    mean_w /= (n * t) as f64;
    let got = guided_attention_loss(&uniform, g).unwrap();
    assert!((got - mean_w / n as f64).abs() < 1e-7);
}

#[test]
fn guided_term_matches_per_item_means() {
    let mut r = rng(7);
    let (n_max, t_max) = (5usize, 7usize);
    let data = random_vec(&mut r, 2 * n_max * t_max, 1.0).iter().map(|v| v.abs()).collect::<Vec<_>>();
    let a = Tensor::new(Shape::new(2, n_max, t_max), data);
    let term = guided_attention_term(&a, &[5, 3], &[7, 4], 0.2).unwrap().item() as f64;
    let item = |b: usize, n: usize, t: usize| {
        let m = AttentionMatrix::from_batch(&a, b, n, t).unwrap();
        guided_attention_loss(&m, 0.2).unwrap()
    };
    let want = 0.5 * (item(0, 5, 7) + item(1, 3, 4));
    assert!((term - want).abs() < 1e-6);
}

#[test]
fn disabled_augmentation_is_identity() {
    let m = model(8);
    let mut r = rng(9);
    let mel = unit_mel(&mut r, 12);
    let p = ids(&mut r, 5);
    let batch = TeacherBatch::new(&[(&p, &mel)]).unwrap();
    let out = augment(&m, &batch, &AugmentParams::NONE, &mut r).unwrap();
    assert_eq!(out, batch.target);
}

#[test]
fn full_replacement_draws_frames_from_the_same_utterance() {
    let m = model(10);
    let mut r = rng(11);
    let mel = unit_mel(&mut r, 12);
    let p = ids(&mut r, 5);
    let batch = TeacherBatch::new(&[(&p, &mel)]).unwrap();
    let params = AugmentParams {
        replace_prob: 1.0,
        ..AugmentParams::NONE
    };
    let out = augment(&m, &batch, &params, &mut rng(12)).unwrap();
    let col = |v: &[f32], t: usize| (0..80).map(|c| v[c * 12 + t]).collect::<Vec<_>>();
    let originals: Vec<Vec<f32>> = (0..12).map(|t| col(&mel.values, t)).collect();
    for t in 0..12 {
        assert!(originals.contains(&col(&out, t)));
    }
}

#[test]
fn feedback_passes_compose_teacher_forward() {
    let m = model(13);
    let mut r = rng(14);
    let mel = unit_mel(&mut r, 10);
    let p = ids(&mut r, 4);
    let batch = TeacherBatch::new(&[(&p, &mel)]).unwrap();
    let params = AugmentParams {
        feedback_passes: 2,
        ..AugmentParams::NONE
    };
    let out = augment(&m, &batch, &params, &mut rng(15)).unwrap();
    let shape = batch.shape();
    let mut x = batch.target.clone();
    for _ in 0..2 {
        let input = Tensor::new(shape, shift_frames(&x, shape));
        x = no_grad(|| m.forward(&p, &[4], &input, &[10], &batch.rates())).unwrap().prediction.to_vec();
    }
    assert_eq!(out.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn perfect_prediction_and_diagonal_attention_cost_nothing() {
    let target = vec![0.3f32; 2 * 3 * 4];
    let pred = Tensor::new(Shape::new(2, 3, 4), target.clone());
    let w = vec![1.0 / 24.0; 24];
    assert_eq!(convtts::nn::ops::l1_loss(&pred, &target, &w).item(), 0.0);
    let diag: Vec<f32> = (0..2).flat_map(|_| (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 })).collect();
    let a = Tensor::new(Shape::new(2, 4, 4), diag);
    assert_eq!(guided_attention_term(&a, &[4, 4], &[4, 4], 0.2).unwrap().item(), 0.0);
}

#[test]
fn masked_mae_ignores_fully_padded_item() {
    let mut r = rng(16);
    let mel = unit_mel(&mut r, 6);
    let p = ids(&mut r, 3);
    let single = TeacherBatch::new(&[(&p, &mel)]).unwrap();
    let mut padded = TeacherBatch::new(&[(&p, &mel), (&p, &mel)]).unwrap();
    padded.frame_lengths[1] = 0;
    let shape = padded.shape();
    for v in &mut padded.target[shape.index(1, 0, 0)..] {
        *v = 0.0;
    }
    let pred_one = random_vec(&mut r, single.target.len(), 1.0);
    let mut pred_two = pred_one.clone();
    pred_two.extend(random_vec(&mut r, single.target.len(), 5.0));
    let l1 = |pred: Vec<f32>, b: &TeacherBatch| {
        convtts::nn::ops::l1_loss(&Tensor::new(b.shape(), pred), &b.target, &b.mae_weights()).item()
    };
    assert!((l1(pred_one, &single) - l1(pred_two, &padded)).abs() < 1e-7);
}

#[test]
fn noam_training_reduces_loss() {
    let m = model(17);
    let mut r = rng(18);
    let mels: Vec<MelSpectrogram> = (0..3).map(|i| unit_mel(&mut r, 14 + 3 * i)).collect();
    let phon: Vec<Vec<usize>> = (0..3).map(|i| ids(&mut r, 4 + i)).collect();
    let items: Vec<(&[usize], &MelSpectrogram)> = phon.iter().map(|p| p.as_slice()).zip(&mels).collect();
    let batch = TeacherBatch::new(&items).unwrap();
    let schedule = LrSchedule::noam(0.002, 10);
    let mut adam = Adam::default();
    let total = |m: &TeacherModel| {
        let (a, b) = no_grad(|| teacher_losses(m, &batch, &batch.target, 0.2)).unwrap();
        a.item() + b.item()
    };
    let initial = total(&m);
    for step in 1..=50 {
        let lr = schedule.learning_rate(step).unwrap();
        teacher_training_step(&m, &batch, &batch.target, &mut adam, lr, 0.2).unwrap();
    }
    let last = total(&m);
    assert!(last < initial, "{initial} -> {last}");
}

#[test]
fn forced_sequential_generation_matches_parallel_pass() {
    let m = model(19);
    let mut r = rng(20);
    let mel = unit_mel(&mut r, 30);
    let p = ids(&mut r, 8);
    let rate = 8.0 / 30.0;
    let shape = Shape::new(1, 80, 30);
    let input = Tensor::new(shape, shift_frames(&mel.values, shape));
    let parallel = no_grad(|| m.forward(&p, &[8], &input, &[30], &[rate])).unwrap();
    let seq = sequential_teacher_forced(&m, &p, &mel.values, 30, rate, None).unwrap();
    assert_eq!(seq.frames, 30);
    let par = parallel.prediction.to_vec();
    let worst = par.iter().zip(&seq.mel).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(worst < 1e-5, "max deviation {worst}");
    let att = parallel.attention.to_vec();
    let worst_a = att.iter().zip(&seq.attention.values).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(worst_a < 1e-5);
}

#[test]
fn windowed_generation_uses_bounded_history() {
    // Longer than the encoder plus decoder receptive field, so the window slides.
    let mut cfg = TeacherConfig::new(VOCAB);
    cfg.encoder_blocks = 3;
    cfg.decoder_blocks = 3;
    let m = TeacherModel::new(cfg, &mut rng(21)).unwrap();
    let span = m.spectrogram_encoder.receptive_field() + m.decoder.receptive_field() - 1;
    let frames = span + 15;
    let mut r = rng(22);
    let mel = unit_mel(&mut r, frames);
    let p = ids(&mut r, 6);
    let rate = 6.0 / frames as f32;
    let shape = Shape::new(1, 80, frames);
    let input = Tensor::new(shape, shift_frames(&mel.values, shape));
    let parallel = no_grad(|| m.forward(&p, &[6], &input, &[frames], &[rate])).unwrap().prediction.to_vec();
    let seq = sequential_teacher_forced(&m, &p, &mel.values, frames, rate, None).unwrap();
    let worst = parallel.iter().zip(&seq.mel).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(worst < 1e-5, "max deviation {worst}");
}

#[test]
fn location_mask_keeps_generation_monotone() {
    let m = model(23);
    let mut r = rng(24);
    let p = ids(&mut r, 9);
    let g = sequential_generate(&m, &p, 0.2, 40, Some(LocationWindow::default())).unwrap();
    assert!(g.frames >= 1 && g.frames <= 40);
    assert!(g.indices.windows(2).all(|w| w[0] <= w[1] && w[1] - w[0] <= 3));
    assert_eq!(g.durations().iter().sum::<usize>(), g.frames);
    assert!(matches!(sequential_generate(&m, &[], 0.2, 10, None), Err(Error::InvalidArgument(_))));
}

#[test]
fn hand_built_attention_with_skipped_phoneme() {
    let (n, t) = (5usize, 12usize);
    let pattern = [0usize, 0, 0, 1, 1, 3, 3, 3, 3, 4, 4, 4];
    let mut a = vec![0.05f32; n * t];
    for (f, &p) in pattern.iter().enumerate() {
        a[p * t + f] = 0.8;
    }
    let got = durations_from_argmax(&masked_argmax(&a, n, t, None), n);
    let mut want = vec![0usize; n];
    for f in 0..t {
        let mut best = 0;
        for p in 0..n {
            if a[p * t + f] > a[best * t + f] {
                best = p;
            }
        }
        want[best] += 1;
    }
    assert_eq!(got, want);
    assert_eq!(got, vec![3, 2, 0, 4, 3]);
}

#[test]
fn extracted_durations_partition_frames() {
    let m = model(25);
    let mut r = rng(26);
    let mel = unit_mel(&mut r, 21);
    let p = ids(&mut r, 7);
    let al = extract_durations(&m, &p, &mel, Some(LocationWindow::default())).unwrap();
    assert_eq!(al.durations.iter().sum::<usize>(), 21);
    assert!(al.indices.windows(2).all(|w| w[0] <= w[1]));
    assert!(al.attention.column_sum_error() < 1e-5);
}

proptest! {
    #[test]
    fn argmax_durations_always_sum_to_frames(
        n in 1usize..12,
        t in 1usize..40,
        seed in any::<u64>(),
        masked in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let a: Vec<f32> = (0..n * t).map(|_| r.random_range(0.0f32..1.0)).collect();
        let window = masked.then(LocationWindow::default);
        let idx = masked_argmax(&a, n, t, window);
        prop_assert_eq!(durations_from_argmax(&idx, n).iter().sum::<usize>(), t);
        if masked {
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn parameter_names_are_unique() {
    let m = model(27);
    let names: Vec<String> = m.named_tensors().into_iter().map(|(n, _, _)| n).collect();
    let set: std::collections::HashSet<_> = names.iter().collect();
    assert_eq!(set.len(), names.len());
}
