use std::collections::BTreeSet;

use stagewise_core::bc::{eval_policy, train_bc, BcConfig, BcMode, PolicyConfig, PolicyModel, WeightMode};
use stagewise_core::labeling::label_dataset;
use stagewise_core::predictor::OraclePredictor;
use stagewise_core::rabc::{weight_dataset, WeightConfig};
use stagewise_core::sampler::{Geometry, SamplerConfig};
use stagewise_core::sim::{gen_experts, gen_suboptimal, FailureKind, FailureMix, SimConfig, SimTrajectory};
use stagewise_core::trajectory::{filter_dataset, Trajectory};
use stagewise_core::Exec;

fn geometry() -> Geometry {
    SamplerConfig::default().geometry()
}

fn oracle(sims: &[SimTrajectory]) -> OraclePredictor {
    OraclePredictor::new(sims.iter().map(|s| (s.trajectory.id.clone(), s.truth.clone())).collect())
}

fn regression_only(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        failure_mix: FailureMix {
            none: 0.0,
            stall: 0.0,
            regression: 1.0,
            misgrasp_retry: 0.0,
            premature_finish: 0.0,
        },
        max_failures: 3,
        slowdown: [1.0, 1.0],
        ..Default::default()
    }
}

fn trajectories(sims: &[SimTrajectory]) -> Vec<Trajectory> {
    sims.iter().map(|s| s.trajectory.clone()).collect()
}

#[test]
fn filter_rejects_exactly_the_flawed_suboptimal_annotations() {
    let cfg = SimConfig::default();
    let mut sims = gen_experts(&cfg, 10, Exec::default()).unwrap();
    sims.extend(gen_suboptimal(&cfg, 40, Exec::default()).unwrap());
    let anns: Vec<_> = sims.iter().filter_map(|s| s.annotation.clone()).collect();
    let report = filter_dataset(&anns, &cfg.protocol(), &trajectories(&sims), Exec::default()).unwrap();

    let k = cfg.protocol().num_stages();
    let flawed: BTreeSet<&str> = anns
        .iter()
        .filter(|a| !a.mistakes.is_empty() || a.segments.len() < k)
        .map(|a| a.trajectory_id.as_str())
        .collect();
    let rejected: BTreeSet<&str> = report.rejected.keys().map(String::as_str).collect();
    assert!(!flawed.is_empty());
    assert_eq!(rejected, flawed);
    assert!(rejected.iter().all(|id| id.starts_with("subopt-")));
}

#[test]
fn noiseless_labels_reproduce_ground_truth() {
    let cfg = SimConfig {
        obs_noise: 0.0,
        seed: 21,
        ..Default::default()
    };
    let sims = gen_experts(&cfg, 25, Exec::default()).unwrap();
    let anns: Vec<_> = sims.iter().map(|s| s.annotation.clone().unwrap()).collect();
    let labeled = label_dataset(&anns, &trajectories(&sims), &cfg.nominal_priors(), Exec::default()).unwrap();
    for s in &sims {
        let labels = &labeled.labels[&s.trajectory.id];
        for (l, y) in labels.iter().zip(&s.truth) {
            assert!((l.y - y).abs() <= 1e-12, "{}@{}: {} vs {y}", s.trajectory.id, l.t, l.y);
        }
    }
}

#[test]
fn corrupted_chunks_get_lower_weight() {
    let cfg = SimConfig::default();
    let mut sims = gen_experts(&cfg, 10, Exec::default()).unwrap();
    sims.extend(gen_suboptimal(&regression_only(0), 10, Exec::default()).unwrap());
    let wc = WeightConfig::default();
    let (table, _) = weight_dataset(&oracle(&sims), &trajectories(&sims), &wc, &geometry(), Exec::default()).unwrap();

    let (mut bad, mut good) = (Vec::new(), Vec::new());
    for row in &table.rows {
        let s = sims.iter().find(|s| s.trajectory.id == row.trajectory_id).unwrap();
        let hits_regression = s
            .failures
            .iter()
            .any(|f| f.kind == FailureKind::Regression && f.start < row.t + wc.delta && f.end >= row.t);
        if hits_regression {
            bad.push(row.w);
        } else if s.failures.is_empty() {
            good.push(row.w);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!bad.is_empty() && !good.is_empty());
    assert!(mean(&bad) < mean(&good), "corrupted {} vs expert {}", mean(&bad), mean(&good));
}

#[test]
fn zero_weight_chunks_do_not_influence_training() {
    let cfg = SimConfig::default();
    let mut sims = gen_experts(&cfg, 4, Exec::default()).unwrap();
    sims.extend(gen_suboptimal(&regression_only(3), 4, Exec::default()).unwrap());
    let pred = oracle(&sims);
    let wc = WeightConfig::default();
    let (table, _) = weight_dataset(&pred, &trajectories(&sims), &wc, &geometry(), Exec::default()).unwrap();
    let zero: Vec<_> = table.rows.iter().filter(|r| r.w == 0.0).collect();
    assert!(!zero.is_empty());

    let bc = BcConfig {
        mode: BcMode::RaBc,
        weight_mode: WeightMode::Offline,
        epochs: 3,
        ..Default::default()
    };
    let run = |trajs: &[Trajectory]| {
        let mut p = PolicyModel::new(PolicyConfig::default()).unwrap();
        train_bc(&mut p, trajs, Some(&pred), &geometry(), &bc, Exec::default()).unwrap();
        p.params.values
    };
    let base = trajectories(&sims);
    let mut perturbed = base.clone();
    for row in &zero {
        let t = perturbed.iter_mut().find(|t| t.id == row.trajectory_id).unwrap();
        for f in &mut t.frames[row.t..row.t + wc.delta] {
            f.action.iter_mut().for_each(|a| *a += 5.0);
        }
    }
    assert_eq!(run(&base), run(&perturbed));
}

#[test]
fn zero_policy_error_is_mean_action_energy() {
    let sims = gen_experts(&SimConfig::default(), 3, Exec::default()).unwrap();
    let trajs = trajectories(&sims);
    let mut p = PolicyModel::new(PolicyConfig::default()).unwrap();
    p.params.values.iter_mut().for_each(|v| *v = 0.0);
    let frames: Vec<_> = trajs.iter().flat_map(|t| &t.frames).collect();
    let energy = frames.iter().map(|f| f.action.iter().map(|a| a * a).sum::<f64>()).sum::<f64>() / frames.len() as f64;
    let mse = eval_policy(&p, &trajs, Exec::default()).unwrap();
    assert!((mse - energy).abs() <= 1e-12 * energy.max(1.0), "{mse} vs {energy}");
}

#[test]
fn uniform_training_on_clean_data_beats_initialisation() {
    let cfg = SimConfig::default();
    let trajs = trajectories(&gen_experts(&cfg, 12, Exec::default()).unwrap());
    let holdout = trajectories(&gen_experts(&SimConfig { seed: 500, ..cfg }, 4, Exec::default()).unwrap());
    let mut p = PolicyModel::new(PolicyConfig::default()).unwrap();
    let before = eval_policy(&p, &holdout, Exec::default()).unwrap();
    train_bc(&mut p, &trajs, None, &geometry(), &BcConfig::default(), Exec::default()).unwrap();
    let after = eval_policy(&p, &holdout, Exec::default()).unwrap();
    assert!(after * 10.0 <= before, "{before} -> {after}");
}

#[test]
fn modes_agree_on_expert_only_data() {
    let (mut uniform, mut weighted) = (0.0, 0.0);
    for seed in 0..5u64 {
        let cfg = SimConfig {
            seed,
            ..Default::default()
        };
        let sims = gen_experts(&cfg, 10, Exec::default()).unwrap();
        let holdout = trajectories(&gen_experts(&SimConfig { seed: seed + 100, ..cfg }, 4, Exec::default()).unwrap());
        let pred = oracle(&sims);
        for (mode, acc) in [(BcMode::Uniform, &mut uniform), (BcMode::RaBc, &mut weighted)] {
            let mut p = PolicyModel::new(PolicyConfig {
                seed,
                ..Default::default()
            })
            .unwrap();
            let bc = BcConfig {
                mode,
                seed,
                epochs: 20,
                ..Default::default()
            };
            train_bc(&mut p, &trajectories(&sims), Some(&pred), &geometry(), &bc, Exec::default()).unwrap();
            *acc += eval_policy(&p, &holdout, Exec::default()).unwrap();
        }
    }
    let rel = (weighted - uniform).abs() / uniform;
    assert!(rel <= 0.1, "uniform {uniform} ra-bc {weighted} rel {rel}");
}

#[test]
fn sequential_and_parallel_agree() {
    let cfg = SimConfig::default();
    let run = |exec: Exec| {
        let mut sims = gen_experts(&cfg, 6, exec).unwrap();
        sims.extend(gen_suboptimal(&cfg, 6, exec).unwrap());
        let anns: Vec<_> = sims.iter().filter_map(|s| s.annotation.clone()).collect();
        let trajs = trajectories(&sims);
        let report = filter_dataset(&anns, &cfg.protocol(), &trajs, exec).unwrap();
        let (table, _) = weight_dataset(&oracle(&sims), &trajs, &WeightConfig::default(), &geometry(), exec).unwrap();
        (sims, report, table)
    };
    assert_eq!(run(Exec::Sequential), run(Exec::default()));
}
