
use std::collections::BTreeMap;

use tsr_core::degradation::{make_lr_sequence, synth_thermal_corpus, DegradationParams};
use tsr_core::metrics::aggregate;
use tsr_core::network::{init_network, NetworkConfig, Parameters};
use tsr_core::training::{
    adam_step, evaluate, lr_at_epoch, sample_sequence_length, sequence_loss_and_grads, train_epoch, Grads,
    OptimizerState, Sequence, TrainConfig,
};
use tsr_core::{seed, Error, Tensor};

fn zero_grads(params: &Parameters<f32>) -> Grads {
    params.iter().map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape()).unwrap())).collect()
}

fn tiny_params(seed: u64) -> Parameters<f32> {
    init_network(&NetworkConfig::tiny(2), seed).unwrap()
}

#[test]
fn adam_first_step_closed_form() {
    let config = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
    let mut params = tiny_params(0);
    let before = params.clone();
    let mut opt = OptimizerState::new(&params).unwrap();
    let mut grads = zero_grads(&params);
    grads.insert("reconstruction.bias".into(), Tensor::new(&[1], vec![1.0]).unwrap());
    adam_step(&mut params, &grads, &mut opt, 1e-4, &config).unwrap();
    assert_eq!(opt.step, 1);

    // m_hat = g, v_hat = g^2  =>  update = -lr * g / (|g| + eps)
    let expected = -1e-4 / (1.0 + 1e-8);
    assert!((expected - -9.9999999e-5f64).abs() < 1e-15);
    let got = params.get("reconstruction.bias").unwrap().data()[0] as f64;
    assert!((got - expected).abs() < 1e-11, "{got}");

    // every other parameter saw a zero gradient and no decay
    for (name, t) in params.iter().filter(|(n, _)| *n != "reconstruction.bias") {
        assert_eq!(t, before.get(name).unwrap(), "{name}");
        assert!(opt.first_moment[name].data().iter().all(|&v| v == 0.0));
        assert!(opt.second_moment[name].data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn adam_weight_decay_closed_form() {
    let config = TrainConfig { weight_decay: 1e-4, ..TrainConfig::default() };
    let mut params = tiny_params(1);
    params.get_mut("reconstruction.bias").unwrap().data_mut()[0] = 1.0;
    let mut opt = OptimizerState::new(&params).unwrap();
    let grads = zero_grads(&params);
    adam_step(&mut params, &grads, &mut opt, 1e-4, &config).unwrap();
    // effective gradient 1e-4, m_hat / sqrt(v_hat) = 1 up to epsilon
    let update = 1e-4 * 1e-4 / (1e-4 + 1e-8);
    let got = params.get("reconstruction.bias").unwrap().data()[0] as f64;
    assert!((got - (1.0 - update)).abs() < 1e-7, "{got}");
    assert!((update - 1e-4).abs() < 1e-7);
}

#[test]
fn adam_zero_gradient_is_a_fixed_point() {
    let config = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
    let mut params = tiny_params(2);
    let before = params.clone();
    let mut opt = OptimizerState::new(&params).unwrap();
    for _ in 0..5 {
        let grads = zero_grads(&params);
        adam_step(&mut params, &grads, &mut opt, 1e-3, &config).unwrap();
    }
    assert_eq!(params, before);
    assert_eq!(opt, OptimizerState { step: 5, ..OptimizerState::new(&before).unwrap() });
}

#[test]
fn adam_rejects_bad_gradients_by_name() {
    let config = TrainConfig::default();
    let mut params = tiny_params(3);
    let mut opt = OptimizerState::new(&params).unwrap();

    let mut grads = zero_grads(&params);
    grads.remove("misr.head.weight");
    let err = adam_step(&mut params, &grads, &mut opt, 1e-4, &config).unwrap_err();
    assert!(matches!(&err, Error::Parameter { name, .. } if name == "misr.head.weight"), "{err}");

    let mut grads = zero_grads(&params);
    grads.get_mut("sisr.fuse.bias").unwrap().data_mut()[0] = f32::NAN;
    let err = adam_step(&mut params, &grads, &mut opt, 1e-4, &config).unwrap_err();
    assert!(err.to_string().contains("sisr.fuse.bias"), "{err}");

    let mut grads = zero_grads(&params);
    grads.insert("reconstruction.bias".into(), Tensor::zeros(&[2]).unwrap());
    assert!(adam_step(&mut params, &grads, &mut opt, 1e-4, &config).is_err());
    assert_eq!(opt.step, 0, "a rejected step must not advance the counter");
}

#[test]
fn schedule_follows_step_decay() {
    let c = TrainConfig::default();
    assert_eq!(lr_at_epoch(0, &c), 1e-4);
    assert_eq!(lr_at_epoch(25, &c), 5e-5);
    assert_eq!(lr_at_epoch(99, &c), 1.25e-5);
    let mut distinct: Vec<f64> = (0..c.epochs).map(|e| lr_at_epoch(e, &c)).collect();
    distinct.dedup();
    assert_eq!(distinct, vec![1e-4, 5e-5, 2.5e-5, 1.25e-5]);

    for (epochs, period) in [(100, 25), (30, 10), (31, 10), (7, 3), (5, 5)] {
        let c = TrainConfig { epochs, lr_decay_period: period, ..TrainConfig::default() };
        let mut values: Vec<f64> = (0..epochs).map(|e| lr_at_epoch(e, &c)).collect();
        values.dedup();
        let expected = epochs / period - usize::from(epochs % period == 0) + 1;
        assert_eq!(values.len(), expected, "{epochs} epochs, period {period}");
    }
}

#[test]
fn sequence_lengths_are_uniform() {
    let config = TrainConfig::default();
    let mut rng = seed::rng(2024);

    // 10^4 draws: chi-square against uniform, 9 degrees of freedom, p = 0.001
    let mut counts = [0usize; 10];
    for _ in 0..10_000 {
        let len = sample_sequence_length(&mut rng, &config);
        assert!((1..=10).contains(&len));
        counts[len - 1] += 1;
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
    assert!(chi2 < 27.88, "chi-square {chi2}, counts {counts:?}");

    // 10^5 draws: every bin within 5% of its expectation
    let mut counts = [0usize; 10];
    for _ in 0..100_000 {
        counts[sample_sequence_length(&mut rng, &config) - 1] += 1;
    }
    for c in counts {
        assert!((c as f64 - 10_000.0).abs() <= 500.0, "{counts:?}");
    }
}

fn one_sample(size: usize, frames: usize, seed: u64) -> (Vec<Tensor<f32>>, Vec<Tensor<f32>>) {
    let hr = synth_thermal_corpus(1, frames, size, seed).unwrap().remove(0);
    let params = DegradationParams { scale: 2, ..DegradationParams::default() };
    let sample = make_lr_sequence(&hr, params).unwrap();
    (sample.lr_frames, sample.hr_frames)
}

#[test]
fn five_hundred_steps_overfit_one_sample() {
    let (lr, hr) = one_sample(32, 2, 5);
    let config = TrainConfig { base_lr: 1e-3, weight_decay: 0.0, ..TrainConfig::default() };
    let mut params = tiny_params(6);
    let mut opt = OptimizerState::new(&params).unwrap();
    let (initial, _) = sequence_loss_and_grads(&params, &lr, &hr).unwrap();
    for _ in 0..500 {
        let (_, grads) = sequence_loss_and_grads(&params, &lr, &hr).unwrap();
        adam_step(&mut params, &grads, &mut opt, config.base_lr, &config).unwrap();
    }
    let (last, _) = sequence_loss_and_grads(&params, &lr, &hr).unwrap();
    println!("overfit: MAE {initial:.5} -> {last:.5} ({:.1}x)", initial / last);
    assert!(last * 10.0 <= initial, "MAE {initial} -> {last}");
}

fn tiny_dataset(n: usize, frames: usize, size: usize) -> Vec<Sequence> {
    synth_thermal_corpus(n, frames, size, 8)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, frames)| Sequence { id: format!("seq_{i:04}"), frames })
        .collect()
}

#[test]
fn train_epoch_is_deterministic() {
    let data = tiny_dataset(3, 4, 24);
    let config = TrainConfig { batch_size: 2, crop_size: 16, max_seq_len: 4, seed: 9, ..TrainConfig::default() };
    let degradation = DegradationParams { scale: 2, ..DegradationParams::default() };
    let run = || {
        let mut params = tiny_params(10);
        let mut opt = OptimizerState::new(&params).unwrap();
        let a = train_epoch(&mut params, &mut opt, &data, &config, &degradation, 0).unwrap();
        let b = train_epoch(&mut params, &mut opt, &data, &config, &degradation, 1).unwrap();
        (params, opt, a, b)
    };
    let (p1, o1, a1, b1) = run();
    let (p2, o2, a2, b2) = run();
    assert_eq!(p1, p2);
    assert_eq!(o1, o2);
    assert_eq!((a1.mean_loss.to_bits(), b1.mean_loss.to_bits()), (a2.mean_loss.to_bits(), b2.mean_loss.to_bits()));
    assert_eq!(a1.optimizer_steps, 2);
    assert_eq!(o1.step, 4);
    assert_ne!(p1, tiny_params(10));
}

#[test]
fn single_sample_loss_drops_over_two_epochs() {
    let data = tiny_dataset(1, 3, 16);
    let config = TrainConfig { base_lr: 1e-3, batch_size: 1, crop_size: 16, min_seq_len: 3, max_seq_len: 3, ..TrainConfig::default() };
    let degradation = DegradationParams { scale: 2, noise_sigma: 0.0, ..DegradationParams::default() };
    let mut params = tiny_params(11);
    let mut opt = OptimizerState::new(&params).unwrap();
    let first = train_epoch(&mut params, &mut opt, &data, &config, &degradation, 0).unwrap();
    let second = train_epoch(&mut params, &mut opt, &data, &config, &degradation, 1).unwrap();
    assert!(second.mean_loss < first.mean_loss, "{} -> {}", first.mean_loss, second.mean_loss);
}

#[test]
fn train_epoch_rejects_scale_mismatch_and_empty_data() {
    let data = tiny_dataset(1, 2, 16);
    let config = TrainConfig { crop_size: 16, ..TrainConfig::default() };
    let mut params = tiny_params(12);
    let mut opt = OptimizerState::new(&params).unwrap();
    let x4 = DegradationParams::default();
    assert!(train_epoch(&mut params, &mut opt, &data, &config, &x4, 0).is_err());
    let x2 = DegradationParams { scale: 2, ..x4 };
    assert!(train_epoch(&mut params, &mut opt, &[], &config, &x2, 0).is_err());
}

#[test]
fn evaluation_contract() {
    let data = tiny_dataset(3, 3, 24);
    let degradation = DegradationParams { scale: 2, ..DegradationParams::default() };

    // degenerate all-zero reconstruction still yields finite, reported metrics
    let mut dead = tiny_params(13);
    for name in ["reconstruction.weight", "reconstruction.bias"] {
        let t = dead.get_mut(name).unwrap();
        *t = t.map(|_| 0.0);
    }
    let e = evaluate(&dead, &data, &degradation).unwrap();
    assert_eq!(e.sr.items.len(), 3);
    assert!(e.sr.items.iter().all(|i| i.psnr.is_finite() && i.ssim.is_finite()));

    // bicubic figures do not depend on the network
    let other = evaluate(&tiny_params(14), &data, &degradation).unwrap();
    assert_eq!(e.bicubic, other.bicubic);
    assert_ne!(e.sr, other.sr);

    // aggregates equal recomputation from the per-item rows
    for report in [&e.sr, &e.bicubic, &other.sr] {
        let psnrs: Vec<f64> = report.items.iter().map(|i| i.psnr).collect();
        let ssims: Vec<f64> = report.items.iter().map(|i| i.ssim).collect();
        assert_eq!(report.psnr, aggregate(&psnrs).unwrap());
        assert_eq!(report.ssim, aggregate(&ssims).unwrap());
    }

    // evaluation degradation depends on the id, not the list position
    let reversed: Vec<Sequence> = data.iter().rev().cloned().collect();
    assert_eq!(evaluate(&dead, &reversed, &degradation).unwrap().sr, e.sr);
}

#[test]
fn loss_is_mean_of_per_step_errors() {
    let (lr, hr) = one_sample(16, 3, 15);
    let params = tiny_params(16);
    let (loss, grads) = sequence_loss_and_grads(&params, &lr, &hr).unwrap();
    let outputs = tsr_core::network::unroll(&params, &lr).unwrap();
    let per_step: Vec<f64> = outputs
        .iter()
        .zip(&hr)
        .map(|(o, h)| tsr_core::ops::mean_abs_error(o, h).unwrap() as f64)
        .collect();
    let expected = per_step.iter().sum::<f64>() / 3.0;
    assert!((loss - expected).abs() < 1e-6, "{loss} vs {expected}");
    let names: BTreeMap<&str, ()> = params.names().map(|n| (n, ())).collect();
    assert_eq!(grads.keys().map(String::as_str).collect::<Vec<_>>(), names.keys().copied().collect::<Vec<_>>());
    assert!(sequence_loss_and_grads(&params, &lr[..2], &hr).is_err());
}
