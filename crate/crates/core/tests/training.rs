use std::sync::OnceLock;

use cylflow::dataset::TrainSplit;
use cylflow::generate::simulate_member;
use cylflow::geometry::{simulation_seed, DatasetId, DomainSpec};
use cylflow::mesher::{triangulate, MeshParams};
use cylflow::model::MgnConfig;
use cylflow::solver::{solve_trajectory, SolverConfig};
use cylflow::trainer::{epoch_order, transitions, TrainConfig, Trainer};

/// Three coarse, short simulations.
fn split() -> &'static TrainSplit {
    static S: OnceLock<TrainSplit> = OnceLock::new();
    S.get_or_init(|| {
        let solver = SolverConfig {
            frames: 8,
            ..SolverConfig::default()
        };
        let trajectories = (0..3)
            .map(|i| {
                simulate_member(DatasetId::StandardCylinder, simulation_seed(21, i), &MeshParams::coarsened(3.0), &solver)
                    .unwrap()
            })
            .collect();
        TrainSplit { trajectories }
    })
}

fn params(t: &Trainer) -> Vec<ndarray::Array2<f64>> {
    t.model.store.params.iter().map(|p| p.value.clone()).collect()
}

#[test]
fn shuffle_covers_every_transition_once() {
    let split = split();
    let mut all = transitions(split);
    all.sort();
    assert_eq!(all.len(), 3 * 7);
    for epoch in 1..4 {
        let (mut order, _) = epoch_order(split, 9, epoch);
        assert_ne!(order, transitions(split), "epoch {epoch} left unshuffled");
        order.sort();
        assert_eq!(order, all);
    }
    assert_ne!(epoch_order(split, 9, 1).0, epoch_order(split, 9, 2).0);
}

#[test]
fn same_seed_trains_identically() {
    let split = split();
    let cfg = TrainConfig {
        seed: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut t = Trainer::new(MgnConfig::small(8, 2), cfg, split).unwrap();
        let s = t.train_epoch(split).unwrap();
        (params(&t), s.mean_loss)
    };
    assert_eq!(run(), run());
    let mut other = Trainer::new(MgnConfig::small(8, 2), TrainConfig { seed: 4, ..cfg }, split).unwrap();
    other.train_epoch(split).unwrap();
    assert_ne!(params(&other), run().0);
}

#[test]
fn zero_rate_and_zero_noise_leave_model_and_data_untouched() {
    let split = split();
    let before = split.clone();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        noise_std: 0.0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(MgnConfig::small(8, 2), cfg, split).unwrap();
    let p0 = params(&t);
    let clean = t.evaluation_loss(split).unwrap();
    let s = t.train_epoch(split).unwrap();
    assert_eq!(params(&t), p0);
    // Same per-transition losses, summed in a different order.
    assert!((s.mean_loss - clean).abs() <= 1e-12 * clean);
    assert_eq!(split.trajectories, before.trajectories);
}

#[test]
fn noise_never_touches_stored_targets() {
    let split = split();
    let before = split.clone();
    let mut t = Trainer::new(MgnConfig::small(8, 1), TrainConfig::default(), split).unwrap();
    t.train_epoch(split).unwrap();
    assert_eq!(split.trajectories, before.trajectories);
}

#[test]
fn clean_loss_descends_over_first_epochs() {
    let split = split();
    // Monotone descent is not guaranteed in general; one retry on a second
    // seed is allowed.
    let descends = |seed: u64| {
        let cfg = TrainConfig {
            seed,
            learning_rate: 1e-3,
            noise_std: 0.0,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(MgnConfig::small(16, 2), cfg, split).unwrap();
        let mut losses = vec![t.evaluation_loss(split).unwrap()];
        for _ in 0..5 {
            t.train_epoch(split).unwrap();
            losses.push(t.evaluation_loss(split).unwrap());
        }
        (losses.windows(2).all(|w| w[1] < w[0]), losses)
    };
    let (ok, first) = descends(0);
    if !ok {
        let (ok2, second) = descends(1);
        assert!(ok2, "seed 0 {first:?}, seed 1 {second:?}");
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let split = split();
    for cfg in [
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            decay: 1.5,
            ..TrainConfig::default()
        },
        TrainConfig {
            noise_std: -0.1,
            ..TrainConfig::default()
        },
    ] {
        assert!(Trainer::new(MgnConfig::small(8, 1), cfg, split).is_err());
    }
}

#[test]
fn halving_the_solver_step_changes_little() {
    let spec = DomainSpec::reference(1.0);
    let mesh = triangulate(&spec, &MeshParams::coarsened(3.0)).unwrap();
    let run = |base_dt: f64| {
        let cfg = SolverConfig {
            frames: 5,
            base_dt,
            ..SolverConfig::default()
        };
        solve_trajectory(&mesh, &spec, &cfg).unwrap()
    };
    let (a, b) = (run(0.00025), run(0.000125));
    let last = |t: &cylflow::solver::Trajectory| t.frames.last().unwrap().velocity.clone();
    let (va, vb) = (last(&a), last(&b));
    let num: f64 = va.iter().zip(&vb).map(|(x, y)| (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sum();
    let den: f64 = vb.iter().map(|y| y[0] * y[0] + y[1] * y[1]).sum();
    let rel = (num / den).sqrt();
    assert!(rel < 1e-2, "relative change {rel:.3e}");
}
