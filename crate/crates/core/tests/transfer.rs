use driftsens::sde::{Domain, PerturbationField, SdeModel};
use driftsens::spectral::{
    eigenpairs, eigenvalue_response, ergodic_average, koopman_of, periodic_stationary_family, singular_triplets,
    singular_value_response, PeriodicParams,
};
use driftsens::ulam::{
    assemble_operators, build_grid, coupled_kernels, estimate_kernel, estimate_kernel_with_derivative,
    operator_norm_residual, Grid, KernelParams,
};

fn unit_interval(n: usize) -> Grid {
    build_grid(&Domain::interval(0.0, 1.0).unwrap(), n).unwrap()
}

fn double_well_grid() -> (SdeModel, Grid) {
    (SdeModel::double_well(0.7, 1.0).unwrap(), build_grid(&Domain::interval(-2.0, 2.0).unwrap(), 16).unwrap())
}

#[test]
fn operators_are_stochastic_and_adjoint() {
    let (model, grid) = double_well_grid();
    let k = estimate_kernel(&model, &PerturbationField::constant(vec![0.3]), &grid, &KernelParams::new(0.5, 50, 500, 41)).unwrap();
    let (p, u) = assemble_operators(&k, &grid).unwrap();
    let n = grid.n_cells();
    for i in 0..n {
        assert!((k.row_mass(i) - 1.0).abs() < 1e-12);
    }
    let ones = vec![1.0; n];
    for v in u.apply(&ones) {
        assert!((v - 1.0).abs() < 1e-12);
    }
    let f: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
    let g: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
    assert!((grid.inner(&p.apply(&f), &g) - grid.inner(&f, &u.apply(&g))).abs() < 1e-12);
    assert_eq!(koopman_of(&p).matrix, u.matrix);
}

#[test]
fn probability_mass_is_preserved() {
    let (model, grid) = double_well_grid();
    let k = estimate_kernel(&model, &PerturbationField::zero(1), &grid, &KernelParams::new(0.5, 50, 500, 42)).unwrap();
    let (p, _) = assemble_operators(&k, &grid).unwrap();
    let n = grid.n_cells();
    let density = vec![1.0 / (n as f64 * grid.box_volume()); n];
    let pushed = p.apply(&density);
    assert!((pushed.iter().sum::<f64>() * grid.box_volume() - 1.0).abs() < 1e-12);
}

#[test]
fn reflected_brownian_motion_keeps_uniform_density() {
    let grid = unit_interval(16);
    let model = SdeModel::brownian(1, 1.0, 1.0).unwrap();
    let k = estimate_kernel(&model, &PerturbationField::zero(1), &grid, &KernelParams::new(1.0, 100, 20_000, 43)).unwrap();
    let (p, _) = assemble_operators(&k, &grid).unwrap();
    let pairs = eigenpairs(&p, 2).unwrap();
    assert!((pairs[0].value.re - 1.0).abs() < 1e-10 && pairs[0].value.im.abs() < 1e-10);
    assert!(pairs[0].residual < 1e-12);
    let r = pairs[0].right_re();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let rms = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r.len() as f64).sqrt() / mean;
    assert!(rms < 0.01, "{rms}");
    // k(x, y) is symmetric for reflected BM; a histogram entry has variance
    // about k / (N vol).
    let sd = (2.0 * k.k.max() / (20_000.0 * grid.box_volume())).sqrt();
    let asym = (&k.k - k.k.transpose()).abs().max();
    assert!(asym < 5.0 * sd, "{asym} vs sd {sd}");
}

#[test]
fn derivative_kernel_rows_have_zero_mass() {
    let (model, grid) = double_well_grid();
    let (_, dk) = estimate_kernel_with_derivative(
        &model,
        &PerturbationField::gaussian_bump(vec![0.0], 0.4, vec![1.0]).unwrap(),
        &grid,
        &KernelParams::new(0.5, 50, 2000, 44),
    )
    .unwrap();
    for i in 0..grid.n_cells() {
        let se = dk.row_mass_std_error[i];
        assert!(dk.row_mass(i).abs() <= 4.0 * se + 1e-12, "row {i}: {} vs se {se}", dk.row_mass(i));
    }
}

#[test]
fn constant_push_moves_mass_to_the_right() {
    let grid = build_grid(&Domain::interval(-2.0, 2.0).unwrap(), 16).unwrap();
    let model = SdeModel::brownian(1, 0.5, 1.0).unwrap();
    let (_, dk) =
        estimate_kernel_with_derivative(&model, &PerturbationField::constant(vec![1.0]), &grid, &KernelParams::new(0.5, 50, 2000, 45))
            .unwrap();
    let centers = grid.centers();
    // d/de of the mean displacement; well inside the domain it is t = 0.5.
    for i in 6..10 {
        let shift: f64 = (0..grid.n_cells()).map(|j| dk.dk[(i, j)] * centers[j][0] * grid.box_volume()).sum();
        assert!(shift > 0.3, "row {i}: {shift}");
    }
}

#[test]
fn residual_of_zero_direction_is_zero() {
    let (model, grid) = double_well_grid();
    let params = KernelParams::new(0.5, 50, 200, 46);
    let ck = coupled_kernels(&model, &PerturbationField::zero(1), &[0.2, 0.1], &grid, &params).unwrap();
    let (p0, _) = assemble_operators(&ck.base, &grid).unwrap();
    let dp = ck.derivative.derivative_operator(0.5);
    for k in &ck.perturbed {
        let (pe, _) = assemble_operators(k, &grid).unwrap();
        assert!(operator_norm_residual(&p0, &pe, &dp, 1.0).unwrap() < 1e-12);
    }
}

#[test]
fn coupled_residual_is_second_order() {
    let (model, grid) = double_well_grid();
    let gamma = PerturbationField::gaussian_bump(vec![0.0], 0.4, vec![1.0]).unwrap();
    let ck = coupled_kernels(&model, &gamma, &[0.2, 0.1, 0.05], &grid, &KernelParams::new(0.5, 50, 2000, 47)).unwrap();
    let (p0, _) = assemble_operators(&ck.base, &grid).unwrap();
    let dp = ck.derivative.derivative_operator(0.5);
    let ratios: Vec<f64> = ck
        .epsilons
        .iter()
        .zip(&ck.perturbed)
        .map(|(eps, k)| {
            let (pe, _) = assemble_operators(k, &grid).unwrap();
            let mut edp = dp.clone();
            edp.matrix *= *eps;
            operator_norm_residual(&p0, &pe, &edp, gamma.v_norm() * eps).unwrap()
        })
        .collect();
    for w in ratios.windows(2) {
        assert!((w[1] / w[0] - 0.5).abs() < 0.1, "{ratios:?}");
    }
}

#[test]
fn double_well_second_eigenvector_separates_the_wells() {
    let (model, grid) = double_well_grid();
    let k = estimate_kernel(&model, &PerturbationField::zero(1), &grid, &KernelParams::new(1.0, 100, 2000, 48)).unwrap();
    let (p, _) = assemble_operators(&k, &grid).unwrap();
    let pairs = eigenpairs(&p, 2).unwrap();
    let l2 = pairs[1].value;
    assert!(l2.im.abs() < 1e-10 && l2.re > 0.0 && l2.re < 1.0, "{l2}");
    let r = pairs[1].right_re();
    let n = r.len();
    assert!(r[1] * r[n - 2] < 0.0, "{r:?}");
}

#[test]
fn leading_eigenvalue_does_not_move() {
    let (model, grid) = double_well_grid();
    let gamma = PerturbationField::gaussian_bump(vec![0.5], 0.4, vec![1.0]).unwrap();
    let (k, dk) = estimate_kernel_with_derivative(&model, &gamma, &grid, &KernelParams::new(0.5, 50, 2000, 49)).unwrap();
    let (p0, _) = assemble_operators(&k, &grid).unwrap();
    let dp = dk.derivative_operator(0.5);
    let pairs = eigenpairs(&p0, 1).unwrap();
    let resp = eigenvalue_response(&p0, &dp, &pairs[0]).unwrap();
    // The left eigenvector is constant, so dlambda_1 is a weighted sum of dk row masses.
    assert!(resp.dvalue.norm() < 1e-2, "{}", resp.dvalue);
}

#[test]
fn singular_value_response_matches_coupled_difference() {
    let (model, grid) = double_well_grid();
    let gamma = PerturbationField::linear(0.5, 1, 2.0).unwrap();
    let ck = coupled_kernels(&model, &gamma, &[0.1], &grid, &KernelParams::new(0.5, 50, 2000, 50)).unwrap();
    let (p0, _) = assemble_operators(&ck.base, &grid).unwrap();
    let dp = ck.derivative.derivative_operator(0.5);
    let (pe, _) = assemble_operators(&ck.perturbed[0], &grid).unwrap();
    let t0 = singular_triplets(&p0, 2).unwrap();
    let te = singular_triplets(&pe, 2).unwrap();
    let ds = singular_value_response(&dp, &t0[1]);
    let fd = (te[1].value - t0[1].value) / 0.1;
    assert!((ds - fd).abs() <= 0.1 * fd.abs(), "{ds} vs {fd}");
}

#[test]
fn periodic_family_of_brownian_motion_is_uniform() {
    let grid = unit_interval(8);
    let model = SdeModel::brownian(1, 1.0, 1e9).unwrap();
    let params = PeriodicParams { period: 1.0, n_phases: 4, steps_per_phase: 25, n_paths_per_cell: 4000, seed: 51 };
    let family = periodic_stationary_family(&model, &PerturbationField::zero(1), &grid, &params).unwrap();
    for f in &family.densities {
        for v in f {
            assert!((v - 1.0).abs() < 0.05, "{v}");
        }
    }
    assert!(family.consistency < 1e-10);
    assert!((ergodic_average(|_, _| 1.0, &family, &grid) - 1.0).abs() < 1e-12);
    assert!((ergodic_average(|_, y| y[0], &family, &grid) - 0.5).abs() < 0.01);
}
