use diffsketch::data::{
    synth_classification, synth_regression, ClassificationSpec, Dataset, Partition, PartitionKind,
    Skew,
};
use diffsketch::learn::{
    accuracy, convergence_check, gradient, least_squares_optimum, loss_value, ConvergenceHistory,
    DistributedSgd, FederatedAveraging, LossSpec, LrSchedule, SketchSpec, TrainConfig,
};
use diffsketch::rng::{stream, Purpose};
use diffsketch::{DenseVector, Error, Scalar, SketchDims};

fn normal(n: usize, seed: u64) -> Vec<f64> {
    let mut r = stream(seed, Purpose::Diagnostics, 1, 0);
    (0..n)
        .map(|_| f64::sample_standard_normal(&mut r))
        .collect()
}

fn finite_difference(w: &[f64], loss: &LossSpec<f64>, data: &Dataset<f64>) -> Vec<f64> {
    let h = 1e-6;
    (0..w.len())
        .map(|j| {
            let mut up = w.to_vec();
            let mut down = w.to_vec();
            up[j] += h;
            down[j] -= h;
            (loss_value(&up, loss, data).unwrap() - loss_value(&down, loss, data).unwrap())
                / (2.0 * h)
        })
        .collect()
}

fn assert_close(a: &[f64], b: &[f64], rel: f64) {
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-3);
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= rel * scale, "{x} vs {y}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    let (part, _) = synth_regression::<f64>(1, 12, 6, 0.3, 5).unwrap();
    let data = &part.workers[0];
    for l2 in [0.0, 0.1] {
        let loss = LossSpec::least_squares(l2);
        let w = normal(6, 1);
        assert_close(
            &gradient(&w, &loss, data).unwrap(),
            &finite_difference(&w, &loss, data),
            1e-5,
        );
    }
    let mut cfg = ClassificationSpec::new(1, 15, 4, 3, 8);
    cfg.test_samples = 3;
    let cls = synth_classification::<f64>(&cfg).unwrap();
    let data = &cls.partition.workers[0];
    for l2 in [0.0, 0.05] {
        let loss = LossSpec::logistic(3, l2);
        let w = normal(loss.param_count(4), 2);
        assert_close(
            &gradient(&w, &loss, data).unwrap(),
            &finite_difference(&w, &loss, data),
            1e-5,
        );
    }
}

#[test]
fn gradient_vanishes_at_least_squares_optimum() {
    let (part, _) = synth_regression::<f64>(2, 30, 5, 0.5, 9).unwrap();
    let pooled = part.pooled();
    for l2 in [0.0, 0.2] {
        let loss = LossSpec::least_squares(l2);
        let x = least_squares_optimum(&pooled, l2).unwrap();
        let g = gradient(&x, &loss, &pooled).unwrap();
        assert!(g.norm() < 1e-9, "{}", g.norm());
    }
}

fn single_sample_partition(workers: usize, dim: usize) -> Partition<f64> {
    let mut x = vec![0.0; dim];
    x[0] = 1.0;
    let ds = Dataset::new(dim, x, vec![2.0]).unwrap();
    Partition {
        workers: vec![ds; workers],
        kind: PartitionKind::Iid,
        seed: 0,
    }
}

#[test]
fn collision_free_round_equals_plain_step() {
    // every worker's gradient is -2 e_0, so only one coordinate is nonzero
    let dim = 12;
    let part = single_sample_partition(3, dim);
    let cfg = TrainConfig {
        workers: 3,
        rounds: 1,
        lr: LrSchedule::Constant(0.1),
        sketch: SketchSpec::Table { t: 1, k: 1 << 20 },
        errcorr_fraction: 0.0,
        master_seed: 4,
        ..TrainConfig::default()
    };
    let loss = LossSpec::least_squares(0.0);
    let mut sgd = DistributedSgd::new(cfg, loss, &part, None).unwrap();
    let out = sgd.sgd_round().unwrap();
    let g = gradient(&vec![0.0; dim], &loss, &part.workers[0]).unwrap();
    for (w, gi) in sgd.weights(0).iter().zip(g.iter()) {
        assert!((w + 0.1 * gi).abs() <= 1e-12);
    }
    assert!(sgd.weights_synchronized());
    assert_eq!(out.metrics.noise_added, 0);
}

#[test]
fn single_worker_applies_queried_sketch() {
    let (part, _) = synth_regression::<f64>(1, 40, 30, 0.1, 2).unwrap();
    let cfg = TrainConfig {
        workers: 1,
        rounds: 3,
        lr: LrSchedule::Constant(0.05),
        sketch: SketchSpec::Table { t: 3, k: 7 },
        errcorr_fraction: 0.0,
        ..TrainConfig::default()
    };
    let mut sgd = DistributedSgd::new(cfg, LossSpec::least_squares(0.0), &part, None).unwrap();
    for _ in 0..3 {
        let before = sgd.weights(0).clone();
        let out = sgd.sgd_round().unwrap();
        let q = out.aggregate.unwrap().query_prefix(30);
        for ((a, b), qi) in sgd.weights(0).iter().zip(before.iter()).zip(q.iter()) {
            assert_eq!(*a, b - 0.05 * qi);
        }
    }
}

#[test]
fn sgd_objective_mostly_decreases() {
    let (part, _) = synth_regression::<f64>(10, 200, 200, 0.1, 11).unwrap();
    let cfg = TrainConfig {
        workers: 10,
        rounds: 200,
        lr: LrSchedule::Constant(0.01),
        sketch: SketchSpec::Table { t: 5, k: 100 },
        errcorr_fraction: 0.0,
        master_seed: 11,
        ..TrainConfig::default()
    };
    let mut sgd = DistributedSgd::new(cfg, LossSpec::least_squares(0.0), &part, None).unwrap();
    let losses: Vec<f64> = sgd
        .run()
        .unwrap()
        .iter()
        .map(|m| m.train_loss.unwrap())
        .collect();
    let decreases = losses.windows(2).filter(|w| w[1] < w[0]).count();
    let share = decreases as f64 / (losses.len() - 1) as f64;
    assert!(share >= 0.95, "decreasing in {share} of rounds");
}

#[test]
fn workers_stay_synchronized_without_error_correction() {
    let (part, _) = synth_regression::<f64>(4, 50, 40, 0.1, 3).unwrap();
    let base = TrainConfig {
        workers: 4,
        rounds: 20,
        sketch: SketchSpec::Table { t: 3, k: 10 },
        eps_target: 1.0,
        pad: 20,
        errcorr_fraction: 0.0,
        ..TrainConfig::default()
    };
    let mut sgd =
        DistributedSgd::new(base.clone(), LossSpec::least_squares(0.0), &part, None).unwrap();
    for _ in 0..20 {
        sgd.sgd_round().unwrap();
        assert!(sgd.weights_synchronized());
    }
    let cfg = TrainConfig {
        errcorr_fraction: 0.5,
        ..base
    };
    let mut sgd = DistributedSgd::new(cfg, LossSpec::least_squares(0.0), &part, None).unwrap();
    sgd.run().unwrap();
    assert!(!sgd.weights_synchronized());
}

#[test]
fn parallel_and_sequential_runs_agree() {
    let cfg = ClassificationSpec::new(5, 40, 20, 4, 6);
    let data = synth_classification::<f64>(&cfg).unwrap();
    let run = |parallel| {
        let cfg = TrainConfig {
            workers: 5,
            rounds: 10,
            eps_target: 1.0,
            pad: 50,
            sketch: SketchSpec::Ratio { t: 7, ratio: 5.0 },
            parallel,
            master_seed: 99,
            ..TrainConfig::default()
        };
        let mut sgd = DistributedSgd::new(
            cfg,
            LossSpec::logistic(4, 0.0),
            &data.partition,
            Some(&data.test),
        )
        .unwrap();
        let metrics = sgd.run().unwrap();
        (metrics, sgd.all_weights().to_vec())
    };
    assert_eq!(run(true), run(false));
}

#[test]
fn privacy_reports_consistent_every_round() {
    let (part, _) = synth_regression::<f64>(5, 30, 60, 0.1, 8).unwrap();
    for eps in [0.5, 5.0, 1e6] {
        let cfg = TrainConfig {
            workers: 5,
            rounds: 5,
            eps_target: eps,
            pad: 1000,
            sketch: SketchSpec::Table { t: 3, k: 8 },
            ..TrainConfig::default()
        };
        let mut sgd = DistributedSgd::new(cfg, LossSpec::least_squares(0.0), &part, None).unwrap();
        for _ in 0..5 {
            let out = sgd.sgd_round().unwrap();
            assert_eq!(out.reports.len(), 5);
            assert!(out.reports.iter().all(|r| r.is_consistent()));
            let m = &out.metrics;
            assert_eq!(m.bytes_sent_per_worker, 30 + 8 * 3 * 8);
            if let Some(max) = m.eps_max {
                assert!(max <= eps * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn fedavg_full_participation_is_gradient_descent() {
    let (part, _) = synth_regression::<f64>(4, 25, 8, 0.2, 21).unwrap();
    let cfg = TrainConfig {
        workers: 4,
        rounds: 5,
        devices_per_round: 4,
        local_epochs: 1,
        batch_size: 25,
        lr: LrSchedule::Constant(0.3),
        sketch: SketchSpec::Exact,
        errcorr_fraction: 0.0,
        ..TrainConfig::default()
    };
    let loss = LossSpec::least_squares(0.0);
    let pooled = part.pooled();
    let mut fed = FederatedAveraging::new(cfg, loss, &part, None).unwrap();
    let mut w = DenseVector::<f64>::zeros(8);
    for _ in 0..5 {
        fed.fedavg_round().unwrap();
        let g = gradient(&w, &loss, &pooled).unwrap();
        w.axpy(-0.3, &g).unwrap();
        for (a, b) in fed.weights().iter().zip(w.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn fedavg_single_device_applies_its_queried_delta() {
    let (part, _) = synth_regression::<f64>(6, 20, 30, 0.2, 4).unwrap();
    let cfg = TrainConfig {
        workers: 6,
        rounds: 4,
        devices_per_round: 1,
        local_epochs: 2,
        sketch: SketchSpec::Table { t: 5, k: 9 },
        errcorr_fraction: 0.0,
        ..TrainConfig::default()
    };
    let mut fed = FederatedAveraging::new(cfg, LossSpec::least_squares(0.0), &part, None).unwrap();
    for _ in 0..4 {
        let before = fed.weights().clone();
        let out = fed.fedavg_round().unwrap();
        assert_eq!(out.participants.len(), 1);
        let q = out.aggregate.unwrap().query_prefix(30);
        for ((a, b), d) in fed.weights().iter().zip(before.iter()).zip(q.iter()) {
            assert_eq!(*a, b + d);
        }
    }
}

#[test]
fn fedavg_rejects_bad_sampling() {
    let (part, _) = synth_regression::<f64>(3, 5, 4, 0.1, 1).unwrap();
    let too_many = TrainConfig {
        workers: 3,
        devices_per_round: 4,
        ..TrainConfig::default()
    };
    assert!(matches!(
        FederatedAveraging::new(too_many, LossSpec::least_squares(0.0), &part, None),
        Err(Error::InvalidArgument(_))
    ));
    let bad_weights = TrainConfig {
        workers: 3,
        devices_per_round: 2,
        sampling_weights: Some(vec![0.5, 0.6, -0.1]),
        ..TrainConfig::default()
    };
    assert!(
        FederatedAveraging::new(bad_weights, LossSpec::least_squares(0.0), &part, None).is_err()
    );
}

#[test]
fn fedavg_label_skew_improves_training_accuracy() {
    let cfg = ClassificationSpec {
        skew: Skew::ClassesPerWorker(2),
        ..ClassificationSpec::new(20, 100, 60, 10, 17)
    };
    let data = synth_classification::<f64>(&cfg).unwrap();
    let loss = LossSpec::logistic(10, 0.0);
    let cfg = TrainConfig {
        workers: 20,
        rounds: 100,
        devices_per_round: 5,
        local_epochs: 1,
        lr: LrSchedule::Constant(0.05),
        sketch: SketchSpec::Ratio { t: 10, ratio: 15.0 },
        errcorr_fraction: 0.0,
        master_seed: 17,
        ..TrainConfig::default()
    };
    let pooled = data.partition.pooled();
    let mut fed = FederatedAveraging::new(cfg, loss, &data.partition, None).unwrap();
    let start = accuracy(fed.weights(), &loss, &pooled).unwrap().unwrap();
    let metrics = fed.run().unwrap();
    let end = accuracy(fed.weights(), &loss, &pooled).unwrap().unwrap();
    assert!((metrics[0].compression_ratio - 15.0).abs() < 0.5);
    assert!(end > start + 0.3, "accuracy {start} -> {end}");
}

#[test]
fn convergence_report_basics() {
    let (part, _) = synth_regression::<f64>(1, 50, 5, 0.3, 6).unwrap();
    let data = part.pooled();
    let loss = LossSpec::least_squares(0.0);
    let x_star = least_squares_optimum(&data, 0.0).unwrap();
    let mut h = ConvergenceHistory::default();
    h.push(x_star.clone(), 1.0);
    let dims = SketchDims::new(3, 10, 5).unwrap();
    let r = convergence_check(&h, &loss, &data, &dims, 0.1, 0.05).unwrap();
    assert!(r.suboptimality[0].abs() < 1e-12);
    assert!(r.holds());
    let logistic = LossSpec::logistic(2, 0.0);
    assert!(matches!(
        convergence_check(&h, &logistic, &data, &dims, 0.1, 0.05),
        Err(Error::Unsupported(_))
    ));
}
