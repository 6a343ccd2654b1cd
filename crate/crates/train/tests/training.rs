//! Loop-level behaviour: determinism, overfit trend, resume, CSV shape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tanet_metrics::{bicubic_scale, Image};
use tanet_model::{load_checkpoint, ModelConfig};
use tanet_tensor::Tensor;
use tanet_train::*;

/// A piecewise pattern with edges and gradients; bicubic downscale for LR.
fn synthetic_pair(name: &str, hr_size: usize, scale: usize, seed: u64) -> TrainPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::filled(hr_size, hr_size, 3, 0.0);
    for c in 0..3 {
        let base: f64 = rng.random_range(0.2..0.8);
        for y in 0..hr_size {
            for x in 0..hr_size {
                let mut v = base + 0.2 * (x as f64 / hr_size as f64 - 0.5);
                if (x / 4 + y / 4) % 2 == 0 {
                    v += 0.15;
                }
                img.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    // a few random rectangles for sharp structure
    for _ in 0..4 {
        let y0 = rng.random_range(0..hr_size / 2);
        let x0 = rng.random_range(0..hr_size / 2);
        let hh = rng.random_range(2..hr_size / 2);
        let ww = rng.random_range(2..hr_size / 2);
        let val: f64 = rng.random_range(0.0..1.0);
        for y in y0..(y0 + hh).min(hr_size) {
            for x in x0..(x0 + ww).min(hr_size) {
                for c in 0..3 {
                    img.set(y, x, c, val);
                }
            }
        }
    }
    let lr = bicubic_scale(&img, 1.0 / scale as f64).unwrap();
    TrainPair {
        name: name.to_string(),
        hr: img.to_tensor(false),
        lr: lr.to_tensor(false),
    }
}

fn tiny_dataset(pairs: usize, hr: usize, scale: usize) -> TrainDataset {
    TrainDataset {
        train: (0..pairs)
            .map(|i| synthetic_pair(&format!("img{i}"), hr, scale, 100 + i as u64))
            .collect(),
        val: Vec::new(),
        scale,
    }
}

#[test]
fn same_seed_gives_identical_history() {
    let dataset = tiny_dataset(3, 16, 4);
    let cfg = ModelConfig::toy();
    let sched = TrainSchedule {
        epochs: 4,
        batch_size: 2,
        seed: 11,
        ..TrainSchedule::default()
    };
    let opts = TrainOptions::default();
    let a = train(&dataset, &cfg, &sched, &opts).unwrap();
    let b = train(&dataset, &cfg, &sched, &opts).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);

    let other = TrainSchedule { seed: 12, ..sched };
    let c = train(&dataset, &cfg, &other, &opts).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn thread_count_does_not_change_results() {
    let dataset = tiny_dataset(4, 16, 4);
    let cfg = ModelConfig::toy();
    let sched = TrainSchedule {
        epochs: 2,
        batch_size: 4,
        seed: 3,
        ..TrainSchedule::default()
    };
    let seq = train(&dataset, &cfg, &sched, &TrainOptions::default()).unwrap();
    let par = train(
        &dataset,
        &cfg,
        &sched,
        &TrainOptions {
            threads: 4,
            ..TrainOptions::default()
        },
    )
    .unwrap();
    assert_eq!(seq.history, par.history);
    assert_eq!(seq.params, par.params);
}

#[test]
fn single_pair_overfit_drops_below_ten_percent() {
    let pair = synthetic_pair("solo", 16, 4, 7);
    let dataset = TrainDataset {
        train: vec![pair],
        val: Vec::new(),
        scale: 4,
    };
    let cfg = ModelConfig::toy();
    let sched = TrainSchedule {
        base_lr: 2e-3,
        epochs: 500,
        batch_size: 1,
        seed: 5,
        ..TrainSchedule::default()
    };
    let outcome = train(&dataset, &cfg, &sched, &TrainOptions::default()).unwrap();
    assert_eq!(outcome.history.len(), 500);
    let initial = outcome.history[0].loss;
    let last = outcome.history.last().unwrap().loss;
    assert!(
        last < 0.1 * initial,
        "loss {last:.5} did not drop below 10% of {initial:.5}"
    );

    // monotone trend over 50-step windows
    let windows: Vec<f64> = outcome
        .history
        .chunks(50)
        .map(|w| w.iter().map(|r| r.loss).sum::<f64>() / w.len() as f64)
        .collect();
    for pair in windows.windows(2) {
        assert!(
            pair[1] <= pair[0],
            "window means must not increase: {windows:?}"
        );
    }
}

#[test]
fn checkpoints_and_csv_are_written_and_resume_continues_numbering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let dataset = tiny_dataset(2, 16, 4);
    let cfg = ModelConfig::toy();
    let sched = TrainSchedule {
        epochs: 2,
        batch_size: 2,
        seed: 21,
        ..TrainSchedule::default()
    };
    let opts = TrainOptions {
        out_dir: Some(out.clone()),
        ..TrainOptions::default()
    };
    let first = train(&dataset, &cfg, &sched, &opts).unwrap();
    assert_eq!(first.next_step, 2); // 2 epochs x 1 batch
    assert!(out.join("last.tanc").exists());
    assert!(out.join("last.state").exists());

    // csv rows equal steps executed
    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("step")).collect();
    assert_eq!(rows.len(), 2);
    assert!(csv.starts_with("# seed=21\n"));

    // resume for two more epochs
    let (loaded_cfg, params) = load_checkpoint(&out.join("last.tanc")).unwrap();
    assert_eq!(loaded_cfg, cfg);
    let state = load_train_state(&out.join("last.state"), &params).unwrap();
    assert_eq!(state.next_epoch, 2);
    assert_eq!(state.next_step, 2);
    let resumed = train(
        &dataset,
        &cfg,
        &TrainSchedule { epochs: 4, ..sched },
        &TrainOptions {
            out_dir: Some(out.clone()),
            resume: Some((params, state)),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    assert_eq!(resumed.next_step, 4);
    assert_eq!(resumed.history.first().unwrap().step, 2);

    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    let steps: Vec<u64> = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("step"))
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps, vec![0, 1, 2, 3]);
}

#[test]
fn validation_tracks_best_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut dataset = tiny_dataset(2, 16, 4);
    dataset.val = vec![synthetic_pair("val", 16, 4, 400)];
    let cfg = ModelConfig::toy();
    let sched = TrainSchedule {
        epochs: 3,
        batch_size: 2,
        seed: 31,
        base_lr: 1e-3,
        ..TrainSchedule::default()
    };
    let outcome = train(
        &dataset,
        &cfg,
        &sched,
        &TrainOptions {
            out_dir: Some(out.clone()),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    assert_eq!(outcome.val_history.len(), 3);
    assert!(outcome.best_val_psnr.is_some());
    assert!(out.join("best.tanc").exists());
}

#[test]
fn scale_mismatch_is_rejected() {
    let mut dataset = tiny_dataset(1, 16, 4);
    dataset.scale = 8;
    let cfg = ModelConfig::toy(); // scale 4
    let sched = TrainSchedule {
        epochs: 1,
        ..TrainSchedule::default()
    };
    assert!(train(&dataset, &cfg, &sched, &TrainOptions::default()).is_err());

    // misaligned pair dims
    let mut bad = tiny_dataset(1, 16, 4);
    bad.train[0].lr = Tensor::zeros(vec![3, 5, 5]);
    assert!(matches!(
        train(&bad, &cfg, &sched, &TrainOptions::default()),
        Err(TrainError::ScaleMismatch { .. })
    ));
}
