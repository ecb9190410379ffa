use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::engine::{Tape, Tensor};
use crate::nets::{Input, Network};

fn gaussian(shape: Vec<usize>, n: usize, seed: u64) -> TensorDataset {
    shifted(shape, n, seed, 1.0, 0.0)
}

fn shifted(shape: Vec<usize>, n: usize, seed: u64, scale: f32, shift: f32) -> TensorDataset {
    let per: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * per).map(|_| rng.sample::<f32, _>(StandardNormal) * scale + shift).collect();
    TensorDataset::new(shape, values).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        averaging_window: 3,
        runs: 3,
        train_size: 40,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

#[test]
fn normalize_examples() {
    let d = shifted(vec![3, 2, 2], 200, 1, 3.0, 1.5);
    let (n, stats) = normalize(&d).unwrap();
    assert_eq!(stats.mean.len(), 3);
    assert!(stats.degenerate.iter().all(|d| !d));
    for c in 0..3 {
        let vals: Vec<f64> = n
            .values()
            .chunks(12)
            .flat_map(|ex| ex[c * 4..(c + 1) * 4].iter().map(|&v| v as f64))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!(mean.abs() < 1e-6, "{mean}");
        assert!((sd - 1.0).abs() < 1e-6, "{sd}");
    }
    // Standardizing again is a no-op.
    let (again, _) = normalize(&n).unwrap();
    for (a, b) in again.values().iter().zip(n.values()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn constant_channel_is_only_shifted() {
    let mut values = Vec::new();
    for i in 0..10 {
        values.extend([4.0, i as f32]);
    }
    let d = TensorDataset::new(vec![2], values).unwrap();
    let (n, stats) = normalize(&d).unwrap();
    assert_eq!(stats.degenerate, vec![true, false]);
    assert!(n.values().iter().step_by(2).all(|&v| v == 0.0));
}

#[test]
fn split_examples() {
    let (t, v) = split(5, 2, 9).unwrap();
    assert_eq!((t.len(), v.len()), (2, 3));
    let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
    all.sort_unstable();
    assert_eq!(all, vec![0, 1, 2, 3, 4]);
    assert_eq!(split(5, 2, 9).unwrap(), (t, v));
    assert!(matches!(split(5, 0, 1), Err(Error::Config { .. })));
    assert!(matches!(split(5, 5, 1), Err(Error::Config { .. })));
}

#[test]
fn split_is_uniform() {
    let mut hits = [0usize; 10];
    for seed in 0..1000 {
        for i in split(10, 5, seed).unwrap().0 {
            hits[i] += 1;
        }
    }
    // Binomial(1000, 1/2): sd = sqrt(250)
    let bound = 3.0 * 250f64.sqrt();
    for h in hits {
        assert!((h as f64 - 500.0).abs() <= bound, "{hits:?}");
    }
}

#[test]
fn rnd_epoch_examples() {
    assert!((rnd_epoch(0.3, 0.1).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(rnd_epoch(0.7, 0.7).unwrap(), 0.0);
    assert_eq!(rnd_epoch(0.2, 0.0).unwrap(), 1.0);
    assert_eq!(rnd_epoch(0.0, 0.0).unwrap(), 0.0);
    assert!(rnd_epoch(-1.0, 0.1).is_err());
    assert!(rnd_epoch(f64::NAN, 0.1).is_err());
}

proptest! {
    #[test]
    fn rnd_epoch_is_bounded(v in 0.0f64..1e6, t in 0.0f64..1e6) {
        let r = rnd_epoch(v, t).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
    }
}

#[test]
fn interval_examples() {
    let i = confidence_interval(&[1.0, 1.0, 1.0, 1.0]).unwrap();
    assert_eq!((i.mean, i.stddev, i.ci95), (1.0, Some(0.0), Some(0.0)));
    let i = confidence_interval(&[0.0, 2.0]).unwrap();
    assert!((i.stddev.unwrap() - 2f64.sqrt()).abs() < 1e-12);
    assert!((i.ci95.unwrap() - 1.96).abs() < 1e-12);
    let one = confidence_interval(&[0.25]).unwrap();
    assert_eq!((one.mean, one.stddev, one.ci95), (0.25, None, None));
    assert!(matches!(confidence_interval(&[]), Err(Error::Usage(_))));

    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let draws: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
    let i = confidence_interval(&draws).unwrap();
    assert!(i.mean.abs() < 0.5);
    assert!((0.7..=1.3).contains(&i.stddev.unwrap()));
}

#[test]
fn identical_examples_have_no_gap() {
    let d = TensorDataset::new(vec![4], [0.3f32, -1.0, 2.0, 0.5].repeat(60)).unwrap();
    let spec = NetworkSpec::mlp(vec![4], 1, 8).with_feature_dim(4);
    let trace = single_run::<f64>(&Dataset::from(d), &spec, &small_config(), 7).unwrap();
    assert_eq!(trace.rnd.len(), 7);
    assert!(trace.rnd.iter().all(|r| r.abs() < 1e-6), "{:?}", trace.rnd);
}

#[test]
fn trace_layout_and_determinism() {
    let d = Dataset::from(gaussian(vec![6], 80, 3));
    let spec = NetworkSpec::mlp(vec![6], 1, 8).with_feature_dim(4);
    let cfg = small_config();
    let a = single_run::<f32>(&d, &spec, &cfg, 11).unwrap();
    let b = single_run::<f32>(&d, &spec, &cfg, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mse_train.len(), cfg.epochs + 1);
    assert_eq!(a.train_loss.len(), cfg.epochs);
    let tail = &a.rnd[cfg.epochs + 1 - cfg.averaging_window..];
    assert!((a.rnd_hat - tail.iter().sum::<f64>() / tail.len() as f64).abs() < 1e-15);
    assert!(a.rnd.iter().all(|r| (-1.0..=1.0).contains(r)));
    assert_ne!(a, single_run::<f32>(&d, &spec, &cfg, 12).unwrap());
}

#[test]
fn single_run_score_is_its_rnd_hat() {
    let d = Dataset::from(gaussian(vec![6], 80, 3));
    let spec = NetworkSpec::mlp(vec![6], 1, 8).with_feature_dim(4);
    let cfg = TrainConfig {
        runs: 1,
        seed: 100,
        ..small_config()
    };
    let report = rnd_score(&d, &spec, &cfg, 1).unwrap();
    assert_eq!(report.run_seeds, vec![101]);
    assert_eq!(report.score, report.per_run[0]);
    assert_eq!(report.stddev, None);
}

#[test]
fn report_is_thread_count_independent() {
    let d = Dataset::from(gaussian(vec![6], 80, 4));
    let spec = NetworkSpec::mlp(vec![6], 1, 8).with_feature_dim(4);
    let cfg = TrainConfig {
        runs: 5,
        ..small_config()
    };
    let one = rnd_score(&d, &spec, &cfg, 1).unwrap();
    let four = rnd_score(&d, &spec, &cfg, 4).unwrap();
    assert_eq!(one.per_run, four.per_run);
    assert_eq!(one.run_seeds, vec![1, 2, 3, 4, 5]);
    let mean = one.per_run.iter().sum::<f64>() / 5.0;
    assert!((one.score - mean).abs() < 1e-9);
    let ci = CI95_Z * one.stddev.unwrap() / 5f64.sqrt();
    assert!((one.ci95.unwrap() - ci).abs() < 1e-9);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    one.write_curves(&mut a).unwrap();
    four.write_curves(&mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * (cfg.epochs + 1));
    assert!(text.starts_with("run,epoch,mse_train,mse_val,rnd_i\n1,0,"));
}

#[test]
fn scale_invariance_at_fixed_parameters() {
    let spec = NetworkSpec::mlp(vec![5], 2, 8).with_feature_dim(3).with_homogeneous(true);
    let target = Network::<f64>::build(&spec, 1).unwrap();
    let predictor = Network::<f64>::build(&spec, 2).unwrap();
    let data = gaussian(vec![5], 30, 5);
    let gap = |c: f64| {
        let x = Tensor::<f64>::new(vec![30, 5], data.values().iter().map(|&v| c * v as f64).collect()).unwrap();
        let mse = |rows: std::ops::Range<usize>| {
            let sub = Tensor::new(vec![rows.len(), 5], x.values()[rows.start * 5..rows.end * 5].to_vec()).unwrap();
            let input = Input::Dense(sub);
            let mut tape = Tape::new();
            let p = predictor.forward(&mut tape, &input, false).unwrap();
            let t = target.forward(&mut tape, &input, false).unwrap();
            let l = tape.mse(p, t).unwrap();
            tape.value(l).values()[0]
        };
        rnd_epoch(mse(10..30), mse(0..10)).unwrap()
    };
    let base = gap(1.0);
    for c in [0.5, 2.0, 10.0] {
        assert!((gap(c) - base).abs() <= 1e-6 * base.abs().max(1e-12), "c={c}");
    }
}

#[test]
fn config_validation() {
    let d = Dataset::from(gaussian(vec![2], 10, 1));
    let spec = NetworkSpec::mlp(vec![2], 1, 4);
    let bad = |f: fn(&mut TrainConfig), field: &str| {
        let mut c = small_config();
        c.train_size = 5;
        f(&mut c);
        match rnd_score(&d, &spec, &c, 1) {
            Err(Error::Config { field: got, .. }) => assert_eq!(got, field),
            other => panic!("expected config error on {field}, got {other:?}"),
        }
    };
    bad(|c| c.averaging_window = 7, "averaging_window");
    bad(|c| c.averaging_window = 0, "averaging_window");
    bad(|c| c.train_size = 10, "train_size");
    bad(|c| c.runs = 0, "runs");
    bad(|c| c.learning_rate = 0.0, "learning_rate");
}

#[test]
fn diverging_runs_fail_the_score() {
    let d = Dataset::from(gaussian(vec![6], 80, 3));
    let spec = NetworkSpec::mlp(vec![6], 2, 16).with_feature_dim(8);
    let cfg = TrainConfig {
        learning_rate: 1e6,
        momentum: 0.0,
        ..small_config()
    };
    match rnd_score(&d, &spec, &cfg, 1) {
        Err(Error::RunsFailed { failed, total, seeds }) => {
            assert_eq!((failed, total), (3, 3));
            assert_eq!(seeds, vec![1, 2, 3]);
        }
        other => panic!("expected RunsFailed, got {other:?}"),
    }
    match single_run::<f32>(&d, &spec, &cfg, 1) {
        Err(Error::Diverged(f)) => {
            assert_eq!(f.run_seed, 1);
            assert!(f.epoch >= 1);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}
