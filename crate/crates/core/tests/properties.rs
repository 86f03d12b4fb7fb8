use minima_geom::data::{generate_dataset, Split};
use minima_geom::experiments::{run_study, Protocol, RunStatus, StudyConfig};
use minima_geom::landscape::{network_grid, Normalization};
use minima_geom::nncore::{checkpoint, LossKind, NetworkLoss, NetworkParams, OptimizerConfig, Trainer};
use minima_geom::sharpness::{measure, SharpnessConfig};
use minima_geom::Objective;

const WIDTHS: [usize; 4] = [2, 16, 16, 1];

fn converged(objective: Objective, data_seed: u64, init_seed: u64) -> (NetworkParams, f64) {
    let data = generate_dataset(objective, 200, data_seed, Split::Train).unwrap();
    let init = NetworkParams::kaiming_uniform(&WIDTHS, init_seed).unwrap();
    let mut t = Trainer::new(init, data.flat_inputs(), &data.targets, LossKind::Mse, OptimizerConfig::adam(1e-2)).unwrap();
    for _ in 0..4000 {
        t.step().unwrap();
    }
    let loss = t.current_loss().unwrap();
    (t.into_params(), loss)
}

fn std_over_mean(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    var.sqrt() / m
}

#[test]
fn sam_sharpness_is_stable_across_perturbation_seeds() {
    let (params, _) = converged(Objective::Booth, 1, 2);
    let data = generate_dataset(Objective::Booth, 200, 1, Split::Train).unwrap();
    let config = SharpnessConfig::default();
    let values: Vec<f64> =
        (0..10).map(|s| measure(&params, &data, LossKind::Mse, &config, s).unwrap().sam_sharpness).collect();
    let r = std_over_mean(&values);
    assert!(r < 0.2, "relative std {r} over {values:?}");
}

#[test]
fn sam_sharpness_is_stable_under_dataset_resampling() {
    // Each run draws its own dataset; all stop at the same train loss.
    let config = StudyConfig {
        objective: Objective::Booth,
        protocol: Protocol::TargetLoss,
        n_runs: 5,
        target_losses: vec![300.0],
        ..StudyConfig::default()
    }
    .scaled(0.2)
    .unwrap();
    let values: Vec<f64> = run_study(&config, 1)
        .unwrap()
        .iter()
        .map(|r| {
            assert_eq!(r.status, RunStatus::Ok);
            r.sharpness.as_ref().unwrap().sam_sharpness
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    assert!(values.iter().all(|v| (v - mean).abs() <= 0.5 * mean), "{values:?}");
}

#[test]
fn converged_models_sit_at_landscape_centre() {
    let mut hits = 0;
    let mut total = 0;
    for f in [Objective::Sphere, Objective::Booth, Objective::ThreeHumpCamel, Objective::Himmelblau] {
        for seed in 0..5 {
            let (params, _) = converged(f, seed, seed + 100);
            let data = generate_dataset(f, 200, seed, Split::Train).unwrap();
            let mut model = NetworkLoss::for_params(&params, data.flat_inputs(), &data.targets, LossKind::Mse).unwrap();
            let grid = network_grid(&mut model, &params, seed, Normalization::PerNeuron, 11, 0.5).unwrap();
            total += 1;
            hits += usize::from(grid.center_is_local_min());
        }
    }
    assert!(hits as f64 >= 0.95 * total as f64, "{hits}/{total}");
}

#[test]
fn training_is_deterministic() {
    let (a, la) = converged(Objective::Rastrigin, 3, 4);
    let (b, lb) = converged(Objective::Rastrigin, 3, 4);
    assert_eq!(la.to_bits(), lb.to_bits());
    assert_eq!(checkpoint::encode(&a), checkpoint::encode(&b));
}

#[test]
fn checkpoint_file_roundtrip() {
    let (params, _) = converged(Objective::Sphere, 0, 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    checkpoint::save(&params, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back, params);
    assert_eq!(checkpoint::content_hash(&back), checkpoint::content_hash(&params));
}

#[test]
fn train_and_test_splits_share_no_points() {
    let train = generate_dataset(Objective::Beale, 1000, 9, Split::Train).unwrap();
    let test = generate_dataset(Objective::Beale, 1000, 9, Split::Test).unwrap();
    let seen: std::collections::HashSet<[u64; 2]> = train.inputs.iter().map(|p| [p[0].to_bits(), p[1].to_bits()]).collect();
    assert!(test.inputs.iter().all(|p| !seen.contains(&[p[0].to_bits(), p[1].to_bits()])));
}
