//! Training schedule, sampler, configuration text and phase contracts.

use hyperweather::config::{KeyValues, ModelConfig};
use hyperweather::dataset::{Dataset, DatasetConfig, Split};
use hyperweather::feature::ClassAverageBank;
use hyperweather::losses::DEFAULT_LAMBDA;
use hyperweather::model::Model;
use hyperweather::params::ParamGroup;
use hyperweather::synth::WeatherClass;
use hyperweather::train::{log_csv, BalancedSampler, LogRow, Phase, TrainConfig, Trainer, LOG_HEADER};
use proptest::prelude::*;

fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        channels: vec![8, 16, 24, 32],
        heads: vec![1, 2, 1, 2],
        sr_ratios: vec![2, 2, 1, 1],
        blocks: 1,
        queries: 2,
        feature_dim: 8,
        tail_channels: 2,
        seed,
        ..ModelConfig::default()
    }
}

fn small_data(counts: [usize; 3]) -> Dataset {
    Dataset::generate(&DatasetConfig {
        counts,
        height: 16,
        width: 16,
        seed: 5,
    })
    .unwrap()
}

fn budget(steps: [usize; 3]) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 6,
        val_every: 2,
        val_per_class: 1,
        seed: 1,
        ..TrainConfig::default()
    }
}

/// Values for every stored tensor of one group.
fn group_values(model: &Model<f32>, group: ParamGroup) -> Vec<Vec<f32>> {
    model
        .store
        .entries()
        .iter()
        .filter(|e| e.group == group)
        .map(|e| e.value.data().to_vec())
        .collect()
}

#[test]
fn default_hyperparameters() {
    let t = TrainConfig::default();
    assert_eq!(t.batch, 8);
    assert_eq!(t.pretrain_lr, 2e-4);
    assert_eq!(t.restore_lr, 2e-4);
    assert_eq!(t.lambda, 0.04);
    assert_eq!(DEFAULT_LAMBDA, 0.04);
    assert!((t.lr(Phase::Finetune) - 4e-5).abs() < 1e-18);
    t.validate().unwrap();
}

#[test]
fn sampler_draws_balanced_deterministic_batches() {
    let data = small_data([10, 10, 10]);
    let s = BalancedSampler::new(&data, 6, 3).unwrap();
    assert_eq!(s.class_count(), 3);
    let again = BalancedSampler::new(&data, 6, 3).unwrap();
    for step in 0..20 {
        let batch = s.batch_indices(Phase::Restore, step);
        assert_eq!(batch, again.batch_indices(Phase::Restore, step));
        for class in WeatherClass::ALL {
            let n = batch.iter().filter(|&&i| data.samples[i].label().unwrap() == class).count();
            assert_eq!(n, 2, "step {step}");
        }
        assert!(batch.iter().all(|&i| data.samples[i].split == Split::Train));
    }
    assert_ne!(
        s.batch_indices(Phase::Restore, 0),
        BalancedSampler::new(&data, 6, 4).unwrap().batch_indices(Phase::Restore, 0)
    );
}

/// Each pass over a class visits every one of its training images once.
#[test]
fn sampler_passes_are_permutations() {
    let data = small_data([10, 10, 10]);
    let s = BalancedSampler::new(&data, 3, 7).unwrap();
    for class in WeatherClass::ALL {
        let pool = data.indices(Split::Train, class);
        for pass in 0..3 {
            let mut seen: Vec<usize> = (0..pool.len())
                .flat_map(|k| s.batch_indices(Phase::Pretrain, pass * pool.len() + k))
                .filter(|&i| data.samples[i].label().unwrap() == class)
                .collect();
            seen.sort_unstable();
            assert_eq!(seen, pool);
        }
    }
}

#[test]
fn train_config_text_round_trip() {
    let cfg = TrainConfig {
        steps: [7, 8, 9],
        batch: 4,
        pretrain_lr: 1.5e-3,
        margin: 0.25,
        seed: 77,
        val_per_class: 0,
        ..TrainConfig::default()
    };
    let back = TrainConfig::default().apply(&KeyValues::parse(&cfg.to_text()).unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn model_config_text_round_trip() {
    for cfg in [
        small_config(3),
        ModelConfig::reference().with_width(0.75),
        ModelConfig::default().with_adaptivity(true, false, true),
    ] {
        let back = ModelConfig::default().apply(&KeyValues::parse(&cfg.to_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}

#[test]
fn config_text_rejects_mistakes() {
    let apply = |text: &str| TrainConfig::default().apply(&KeyValues::parse(text).unwrap());
    assert!(apply("train.stepz.pretrain = 3").is_err());
    assert!(apply("train.batch = 1").is_err());
    assert!(apply("train.batch = many").is_err());
    assert!(apply("train.margin = 0").is_err());
    assert!(apply("train.lr.restore = -1").is_err());
    assert!(apply("train.steps.finetune = 0").is_err());
    assert!(KeyValues::parse("train.batch = 2\ntrain.batch = 3").is_err());
    assert!(KeyValues::parse("no equals sign").is_err());
    assert_eq!(apply("# comment only\n\ntrain.batch = 4 # trailing\n").unwrap().batch, 4);
}

#[test]
fn pretraining_needs_two_classes() {
    let all = small_data([6, 6, 6]);
    let data = Dataset {
        samples: all
            .samples
            .into_iter()
            .filter(|s| s.classes.single_class() == Some(WeatherClass::Drop))
            .collect(),
    };
    let mut t = Trainer::new(Model::new(&small_config(1)).unwrap(), budget([2, 2, 2])).unwrap();
    assert!(t.pretrain(&data).is_err());
}

#[test]
fn restoration_needs_a_class_bank() {
    let data = small_data([6, 6, 6]);
    let mut t = Trainer::starting_at(
        Model::new(&small_config(1)).unwrap(),
        budget([2, 2, 2]),
        Phase::Restore,
        ClassAverageBank::default(),
    )
    .unwrap();
    assert!(t.train_restoration(&data).is_err());
}

#[test]
fn phases_run_in_order() {
    let data = small_data([6, 6, 6]);
    let mut t = Trainer::new(Model::new(&small_config(1)).unwrap(), budget([2, 2, 2])).unwrap();
    assert!(t.run_phase(&data, Phase::Restore, None).is_err());
    assert!(t.run_phase(&data, Phase::Done, None).is_err());
    t.run_all(&data).unwrap();
    assert_eq!(t.phase, Phase::Done);
    assert_eq!(t.bank.classes(), WeatherClass::ALL.to_vec());
    let phases: Vec<u8> = t.log.iter().map(|r| r.phase).collect();
    assert_eq!(phases, vec![1, 1, 2, 2, 3, 3]);
    assert!(t.log.iter().filter(|r| r.phase > 1).all(|r| r.val_psnr.is_some() == (r.step == 2)));
    assert!(t.log.iter().filter(|r| r.phase == 1).all(|r| r.val_psnr.is_none()));
}

/// Pretraining touches only the feature network, restoration only the
/// backbone, and fine-tuning both.
#[test]
fn phases_update_their_own_parameters() {
    let data = small_data([6, 6, 6]);
    let mut t = Trainer::new(Model::new(&small_config(2)).unwrap(), budget([2, 2, 2])).unwrap();
    let snapshot = |t: &Trainer| (group_values(&t.model, ParamGroup::Feature), group_values(&t.model, ParamGroup::Backbone));
    let (f0, b0) = snapshot(&t);
    t.pretrain(&data).unwrap();
    let (f1, b1) = snapshot(&t);
    assert_ne!(f1, f0);
    assert_eq!(b1, b0);
    t.train_restoration(&data).unwrap();
    let (f2, b2) = snapshot(&t);
    assert_eq!(f2, f1);
    assert_ne!(b2, b1);
    t.finetune(&data).unwrap();
    let (f3, b3) = snapshot(&t);
    assert_ne!(f3, f2);
    assert_ne!(b3, b2);
}

#[test]
fn pretraining_reduces_the_contrastive_loss() {
    let data = small_data([20, 20, 20]);
    let mut t = Trainer::new(Model::new(&small_config(3)).unwrap(), budget([60, 1, 1])).unwrap();
    t.pretrain(&data).unwrap();
    let mean = |rows: &[LogRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
    let (first, last) = (mean(&t.log[..15]), mean(&t.log[45..]));
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn training_is_deterministic() {
    let data = small_data([6, 6, 6]);
    let run = || {
        let mut t = Trainer::new(Model::new(&small_config(4)).unwrap(), budget([3, 3, 2])).unwrap();
        t.run_all(&data).unwrap();
        (t.model.store.checksum(), t.log, t.bank)
    };
    assert_eq!(run(), run());
}

#[test]
fn log_csv_layout() {
    let rows = vec![
        LogRow {
            step: 1,
            phase: 1,
            loss: -0.5,
            val_psnr: None,
            val_ssim: None,
            lr: 2e-4,
        },
        LogRow {
            step: 2,
            phase: 2,
            loss: 0.125,
            val_psnr: Some(21.5),
            val_ssim: Some(0.75),
            lr: 2e-4,
        },
    ];
    let csv = log_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines, vec![LOG_HEADER, "1,1,-0.5,,,0.0002", "2,2,0.125,21.5,0.75,0.0002"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn log_survives_a_checkpoint(losses in prop::collection::vec(-10.0f64..10.0, 1..6), psnr in 10.0f64..40.0) {
        let mut t = Trainer::new(Model::new(&small_config(1)).unwrap(), budget([2, 2, 2])).unwrap();
        t.log = losses
            .iter()
            .enumerate()
            .map(|(i, &loss)| LogRow {
                step: i + 1,
                phase: 2,
                loss,
                val_psnr: (i % 2 == 0).then_some(psnr),
                val_ssim: None,
                lr: 2e-4,
            })
            .collect();
        let back = Trainer::from_container(&t.to_container()).unwrap();
        prop_assert_eq!(back.log, t.log);
    }
}
