use driftsens::sde::{
    estimate_v_norm, read_dump, simulate_ensemble, simulate_path, write_dump, Domain, PerturbationField, Sampling,
    SdeModel, TimeGrid,
};

fn terminal_moments(model: &SdeModel, domain: &Domain, x0: f64, n: usize, seed: u64) -> (f64, f64) {
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let ens = simulate_ensemble(model, domain, &[x0], &PerturbationField::zero(1), &grid, n, seed).unwrap();
    let xs: Vec<f64> = ens.paths().map(|p| p.terminal()[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

#[test]
fn constant_drift_terminal_mean_and_variance() {
    let model = SdeModel::constant_drift(1.0, 1.0, 1.0).unwrap();
    let (mean, var) = terminal_moments(&model, &Domain::unbounded(1), 0.0, 100_000, 11);
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "variance {var}");
}

#[test]
fn ou_mean_decays_at_rate_theta() {
    let model = SdeModel::ornstein_uhlenbeck(1.0, 0.0, 0.5, 1.0).unwrap();
    let (mean, _) = terminal_moments(&model, &Domain::unbounded(1), 1.0, 50_000, 12);
    // Euler bias (1 - dt)^n vs exp(-1) is about 2e-3.
    assert!((mean - (-1.0f64).exp()).abs() < 0.01, "mean {mean}");
}

#[test]
fn single_path_ensemble_matches_simulate_path() {
    let model = SdeModel::double_well(0.7, 1.0).unwrap();
    let domain = Domain::interval(-2.0, 2.0).unwrap();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let gamma = PerturbationField::constant(vec![0.3]);
    let ens = simulate_ensemble(&model, &domain, &[0.1], &gamma, &grid, 1, 99).unwrap();
    let path = simulate_path(&model, &domain, &[0.1], &gamma, &grid, 99, 0).unwrap();
    assert_eq!(ens.path(0).states, path.states.as_slice());
    assert_eq!(ens.path(0).increments, path.increments.as_slice());
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let model = SdeModel::double_well(0.7, 1.0).unwrap();
    let domain = Domain::interval(-2.0, 2.0).unwrap();
    let grid = TimeGrid::new(1.0, 40).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_ensemble(&model, &domain, &[0.0], &PerturbationField::zero(1), &grid, 500, 5).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn reflected_paths_stay_in_the_box() {
    let model = SdeModel::brownian(2, 2.0, 1.0).unwrap();
    let domain = Domain::new_box(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let ens = simulate_ensemble(&model, &domain, &[0.5, 0.0], &PerturbationField::zero(2), &grid, 200, 3).unwrap();
    let mut reflections = 0;
    for p in ens.paths() {
        for k in 0..=grid.n_steps() {
            assert!(domain.contains(p.state(k)));
        }
        reflections += (0..grid.n_steps()).filter(|k| p.is_reflected(*k)).count();
    }
    assert!(reflections > 0);
}

#[test]
fn starting_outside_the_domain_is_rejected() {
    let model = SdeModel::brownian(1, 1.0, 1.0).unwrap();
    let domain = Domain::interval(0.0, 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 10).unwrap();
    assert!(simulate_ensemble(&model, &domain, &[2.0], &PerturbationField::zero(1), &grid, 10, 1).is_err());
}

#[test]
fn v_norm_of_simple_fields() {
    let domain = Domain::interval(-2.0, 2.0).unwrap();
    let sampling = Sampling { resolution: 2001, time_samples: 1, horizon: 1.0 };
    let c = estimate_v_norm(&PerturbationField::constant(vec![0.7]), &domain, sampling).unwrap();
    assert!((c - 0.7).abs() < 1e-12);
    let lin = PerturbationField::linear(3.0, 1, 2.0).unwrap();
    let v = estimate_v_norm(&lin, &domain, sampling).unwrap();
    assert!((v - 6.0).abs() < 1e-9, "{v}");
    assert!((lin.v_norm() - v).abs() < 1e-9);
    assert_eq!(estimate_v_norm(&PerturbationField::zero(1), &domain, sampling).unwrap(), 0.0);
}

#[test]
fn dump_round_trip() {
    let model = SdeModel::brownian(1, 1.0, 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let ens = simulate_ensemble(&model, &Domain::unbounded(1), &[0.0], &PerturbationField::zero(1), &grid, 4, 8).unwrap();
    let mut bytes = Vec::new();
    write_dump(&ens, &mut bytes).unwrap();
    let dump = read_dump(bytes.as_slice()).unwrap();
    assert_eq!((dump.n_paths, dump.n_steps, dump.seed), (4, 8, 8));
    for i in 0..4 {
        for k in 0..=8 {
            assert_eq!(dump.state(k, i), ens.path(i).state(k));
        }
    }
}
