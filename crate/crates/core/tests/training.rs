use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wiopen_core::net::{DeskScale, Tensor};
use wiopen_core::osgr::{train, DecisionModel, FeatureBank, TrainConfig, TrainSample};
use wiopen_core::par;

const INPUT: [usize; 3] = [2, 4, 16];
const TARGET: [usize; 2] = [6, 8];

/// Class prototypes plus Gaussian jitter; the DFS target is a class-specific
/// ridge so the decoder has something to learn.
fn toy_samples(classes: u32, per_class: usize, jitter: f64, seed: u64) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = INPUT.iter().product();
    let protos: Vec<Vec<f64>> = (0..classes).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let noise = Normal::new(0.0, jitter).unwrap();
    let mut out = Vec::new();
    for i in 0..per_class {
        for c in 0..classes {
            let data: Vec<f64> = protos[c as usize].iter().map(|p| p + noise.sample(&mut rng)).collect();
            let dfs = Tensor::from_fn(&TARGET, |j| {
                let (bin, frame) = (j / TARGET[1], j % TARGET[1]);
                if bin == (c as usize + frame + i % 2) % TARGET[0] {
                    1.0
                } else {
                    0.0
                }
            });
            out.push(TrainSample {
                input: Tensor::new(INPUT.to_vec(), data).unwrap(),
                dfs,
                label: c,
            });
        }
    }
    out
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        k: 3,
        batch_size: 8,
        epochs: 3,
        lr: 1e-2,
        arch: DeskScale {
            enc_channels: vec![4, 8],
            embed_dim: 8,
            dec_channels: vec![4],
            dec_seed: (2, 2),
        },
        ..TrainConfig::default()
    }
}

fn decisions(model: &DecisionModel, samples: &[TrainSample]) -> Vec<(Option<u32>, u64)> {
    samples
        .iter()
        .map(|s| {
            let d = model.classify(&s.input).unwrap();
            (d.label, d.score().to_bits())
        })
        .collect()
}

#[test]
fn overfits_a_ten_sample_set() {
    let samples = toy_samples(2, 5, 0.3, 11);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 10,
        lr_step: 1000,
        ..tiny_config()
    };
    let out = train(&samples, &cfg, 5).unwrap();
    let last = out.history.epochs.last().unwrap();
    assert!(last.p_correct >= 0.99, "p_correct {}", last.p_correct);
    assert!(out.history.trained.p_correct >= 0.99, "{:?}", out.history.trained);
}

#[test]
fn one_epoch_lowers_the_loss() {
    let cfg = TrainConfig {
        epochs: 1,
        ..tiny_config()
    };
    let mut wins = 0;
    for seed in 0..100 {
        let samples = toy_samples(4, 6, 0.5, seed);
        let out = train(&samples, &cfg, seed).unwrap();
        if out.history.trained.loss < out.history.initial.loss {
            wins += 1;
        }
    }
    assert!(wins >= 95, "{wins}/100 seeds descended");
}

#[test]
fn result_is_independent_of_thread_count() {
    let samples = toy_samples(3, 6, 0.4, 2);
    let cfg = tiny_config();
    let a = par::with_threads(1, || train(&samples, &cfg, 9).unwrap());
    let b = par::with_threads(3, || train(&samples, &cfg, 9).unwrap());
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.threshold().to_bits(), b.model.threshold().to_bits());
    for (p, q) in a.model.network().params().iter().zip(b.model.network().params()) {
        assert_eq!(p, q);
    }
    assert_eq!(decisions(&a.model, &samples), decisions(&b.model, &samples));

    let c = train(&samples, &cfg, 10).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn saved_model_reloads_bit_exactly() {
    let samples = toy_samples(3, 6, 0.4, 3);
    let model = train(&samples, &tiny_config(), 4).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = DecisionModel::load(dir.path()).unwrap();
    assert_eq!(back.threshold().to_bits(), model.threshold().to_bits());
    assert_eq!(back.config(), model.config());
    assert_eq!(decisions(&back, &samples), decisions(&model, &samples));

    let empty = tempfile::tempdir().unwrap();
    assert!(DecisionModel::load(empty.path()).is_err());
}

#[test]
fn acceptance_shrinks_as_xi_decreases() {
    let samples = toy_samples(3, 6, 0.4, 6);
    let model = train(&samples, &tiny_config(), 6).unwrap().model;
    let queries = toy_samples(5, 4, 0.6, 60);
    let mut previous: Option<Vec<bool>> = None;
    for xi in [3.0, 2.5, 2.0, 1.5, 1.0, 0.5, 1e-9] {
        let m = model.with_xi(xi).unwrap();
        let accepted: Vec<bool> = queries.iter().map(|q| m.classify(&q.input).unwrap().label.is_some()).collect();
        if let Some(prev) = &previous {
            for (now, before) in accepted.iter().zip(prev) {
                assert!(!now || *before, "xi {xi} accepted a query rejected at a larger xi");
            }
        }
        previous = Some(accepted);
    }
    assert!(model.with_xi(0.0).is_err());
}

#[test]
fn bank_order_does_not_change_decisions() {
    let samples = toy_samples(3, 6, 0.4, 8);
    let model = train(&samples, &tiny_config(), 8).unwrap().model;
    let bank = model.bank();
    let mut order: Vec<usize> = (0..bank.len()).collect();
    order.reverse();
    order.rotate_left(5);
    let shuffled = FeatureBank::new(
        order.iter().map(|&i| bank.row(i).to_vec()).collect(),
        order.iter().map(|&i| bank.labels()[i]).collect(),
        bank.momentum(),
    )
    .unwrap();
    let permuted =
        DecisionModel::new(model.network().clone(), shuffled, model.threshold_base(), model.config().clone()).unwrap();
    let queries = toy_samples(4, 5, 0.6, 80);
    for q in &queries {
        let a = model.classify(&q.input).unwrap();
        let b = permuted.classify(&q.input).unwrap();
        assert_eq!(a.label, b.label);
        assert_eq!(a.candidate.label, b.candidate.label);
        assert!((a.score() - b.score()).abs() < 1e-12);
    }
}

#[test]
fn rejects_unusable_training_sets() {
    let cfg = tiny_config();
    let one_class: Vec<TrainSample> = toy_samples(2, 4, 0.3, 1).into_iter().filter(|s| s.label == 0).collect();
    assert!(train(&one_class, &cfg, 0).is_err());

    let mut lonely = toy_samples(2, 4, 0.3, 1);
    lonely.push(TrainSample {
        label: 7,
        ..lonely[0].clone()
    });
    assert!(train(&lonely, &cfg, 0).is_err());

    let small = toy_samples(2, 1, 0.3, 1);
    assert!(train(&small, &cfg, 0).is_err());

    let bad_gamma = TrainConfig { gamma: 0.0, ..cfg };
    assert!(train(&toy_samples(2, 4, 0.3, 1), &bad_gamma, 0).is_err());
}
