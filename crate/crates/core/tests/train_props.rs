use advfeat_core::boundary::{build_wstd, solve_lambda};
use advfeat_core::data::{gen_dataset, gen_orthogonal_dataset, ortho_stats, Source};
use advfeat_core::net::{init_params, NetworkConfig};
use advfeat_core::theory::check_theorem1;
use advfeat_core::train::{direction_distance, train, StoppedBy, TrainConfig};

#[test]
fn small_step_full_batch_loss_never_increases() {
    for seed in 0..10 {
        let ds = gen_dataset(Source::Gaussian, 6, 5, seed, 1.0).unwrap();
        let cfg = NetworkConfig::balanced(6, 8, 0.5).unwrap().with_init_scale(0.5);
        let tc = TrainConfig {
            lr: 1e-3,
            momentum: 0.0,
            max_epochs: 1000,
            ..TrainConfig::default()
        };
        let (_, report) = train(&init_params(&cfg, seed), &cfg, &ds, &tc).unwrap();
        assert_eq!(report.loss_trace.len(), 1001);
        for w in report.loss_trace.windows(2) {
            assert!(w[1].1 <= w[0].1, "seed {seed}: loss rose at epoch {}", w[1].0);
        }
    }
}

#[test]
fn identical_configs_give_identical_reports() {
    let ds = gen_dataset(Source::Uniform, 20, 12, 3, 1.0).unwrap();
    let cfg = NetworkConfig::balanced(20, 6, 0.3).unwrap();
    let tc = TrainConfig {
        max_epochs: 300,
        batch: advfeat_core::train::Batch::Minibatch { size: 5 },
        seed: 11,
        ..TrainConfig::default()
    };
    let p0 = init_params(&cfg, 5);
    let (pa, mut ra) = train(&p0, &cfg, &ds, &tc).unwrap();
    let (pb, mut rb) = train(&p0, &cfg, &ds, &tc).unwrap();
    ra.wall_seconds = 0.0;
    rb.wall_seconds = 0.0;
    assert_eq!(pa, pb);
    assert_eq!(ra, rb);
}

#[test]
fn orthogonal_training_converges_in_direction_to_wstd() {
    let ds = gen_orthogonal_dataset(32, 6, 2, 32f64.sqrt()).unwrap();
    assert!(check_theorem1(&ortho_stats(&ds), ds.n(), 0.5).pass);
    let cfg = NetworkConfig::balanced(32, 8, 0.5).unwrap();
    let tc = TrainConfig {
        lr: 0.05,
        max_epochs: 200_000,
        ..TrainConfig::default()
    };
    let (p, report) = train(&init_params(&cfg, 1), &cfg, &ds, &tc).unwrap();
    assert_eq!(report.stopped_by, StoppedBy::Converged);
    assert!(report.direction_drift < 1e-4, "{report:?}");
    assert!(report.margin_min > 0.0);
    let lambda = solve_lambda(&ds, 0.5, 4, 4).unwrap();
    let wstd = build_wstd(&ds, lambda.view(), &cfg).unwrap();
    let dist = direction_distance(&p, &wstd).unwrap();
    assert!(dist < 0.1, "distance to W^std direction {dist}");
}
