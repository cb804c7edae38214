use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::sde::{simulate_ensemble, PerturbationField, TimeGrid};
use crate::sensitivity::{
    derivative_continuity_scan, finite_difference_derivative, frechet_derivative, least_squares, quadratic_decay_fit,
    McParams, Observable,
};
use crate::spectral::{
    eigenpairs, eigenvalue_response, ergodic_average, periodic_stationary_family, singular_triplets, trajectory_average,
    transport_density, PeriodicParams,
};
use crate::ulam::{assemble_operators, build_grid, coupled_kernels, estimate_kernel, Grid, KernelParams};
use crate::girsanov::reweighted_expectation;

use super::config::{ExperimentConfig, ExperimentKind};
use super::{derive_seed, discontinuity_demo, Check, Outcome};

/// Agreement threshold, in standard errors, for Monte-Carlo comparisons.
const SIGMAS: f64 = 3.0;
/// Accepted range of fitted decay orders.
const SLOPE_RANGE: (f64, f64) = (1.7, 2.3);
/// Row mass and adjointness tolerance.
const EXACT_TOL: f64 = 1e-12;
/// dk row mass bound in standard errors.
const ROW_MASS_SIGMAS: f64 = 4.0;
/// Allowed spread of the maximal kernel entry over the gamma ball.
const MAX_ENTRY_SPREAD: f64 = 0.25;
/// Radius of that ball in V-norm.
const BALL_RADIUS: f64 = 0.25;
/// Leading eigenvalue of every P(gamma).
const LEADING_TOL: f64 = 1e-12;
/// Relative agreement of the eigenvalue response with its finite difference.
const RESPONSE_REL_TOL: f64 = 0.1;

fn f(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn run(config: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    match config.kind {
        ExperimentKind::DerivativeCheck => derivative_check(config, dir),
        ExperimentKind::RemainderScaling => remainder_scaling(config, dir),
        ExperimentKind::OperatorResponse => operator_response(config, dir),
        ExperimentKind::EigenResponse => eigen_response(config, dir),
        ExperimentKind::CoherentSets => coherent_sets(config, dir),
        ExperimentKind::PeriodicForcing => periodic_forcing(config, dir),
        ExperimentKind::ContinuityScan => continuity_scan(config, dir),
        ExperimentKind::DiscontinuityDemo => discontinuity(config, dir),
    }
}

struct Setup {
    model: crate::sde::SdeModel,
    domain: crate::sde::Domain,
    grid: TimeGrid,
    x0: Vec<f64>,
    gamma: PerturbationField,
}

fn setup(config: &ExperimentConfig) -> Result<Setup> {
    let model = config.model.build()?;
    let domain = config.domain()?;
    let gamma = match &config.gamma {
        Some(g) => g.build(model.dim(), &domain)?,
        None => PerturbationField::zero(model.dim()),
    };
    Ok(Setup {
        grid: config.time_grid()?,
        x0: config.initial_point()?,
        model,
        domain,
        gamma,
    })
}

fn observable(config: &ExperimentConfig) -> Result<Observable> {
    config
        .observable
        .as_ref()
        .ok_or_else(|| Error::config("observable", "missing"))?
        .build(config.time.t_end)
}

fn ulam_grid(config: &ExperimentConfig, s: &Setup) -> Result<Grid> {
    let boxes = config.grid.ok_or_else(|| Error::config("grid", "missing"))?.boxes_per_axis;
    build_grid(&s.domain, boxes)
}

fn kernel_params(config: &ExperimentConfig, seed: u64) -> KernelParams {
    KernelParams::new(config.time.t_end, config.time.n_steps, config.mc.n_paths_per_cell, seed)
}

fn derivative_check(config: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let obs = observable(config)?;
    let mut out = Outcome::default();
    let zero = PerturbationField::zero(s.model.dim());
    let base = simulate_ensemble(&s.model, &s.domain, &s.x0, &zero, &s.grid, config.mc.n_paths, config.seed)?;
    let d = frechet_derivative(&base, &s.gamma, &s.model, &obs)?;
    let z = reweighted_expectation(&base, &s.gamma, &s.model, &Observable::constant(1.0))?;
    out.value("derivative", d.mean);
    out.value("derivative_std_error", d.std_error);
    out.value("mean_z", z.mean);
    out.check(Check::at_most("mean_z_sigmas", (z.mean - 1.0).abs() / z.std_error.max(f64::MIN_POSITIVE), 4.0));
    let mut rows = vec![vec!["girsanov".into(), f(d.mean), f(d.std_error), d.n_samples.to_string()]];
    let spec = config.derivative.clone().unwrap_or(super::DerivativeSpec {
        expected: None,
        fd_step: None,
    });
    if let Some(expected) = spec.expected {
        out.value("expected", expected);
        out.check(Check::at_most("analytic_sigmas", (d.mean - expected).abs() / d.std_error, SIGMAS));
    }
    if let Some(h) = spec.fd_step {
        let mc = McParams {
            n_paths: config.mc.n_paths,
            seed: derive_seed(config.seed, 1),
        };
        let fd = finite_difference_derivative(&s.model, &s.domain, &s.x0, &s.gamma, &obs, &s.grid, h, mc)?;
        out.value("finite_difference", fd.mean);
        out.value("finite_difference_std_error", fd.std_error);
        let combined = (d.std_error.powi(2) + fd.std_error.powi(2)).sqrt();
        out.check(Check::at_most("cross_estimator_sigmas", (d.mean - fd.mean).abs() / combined, SIGMAS));
        rows.push(vec![format!("central_difference(h={h})"), f(fd.mean), f(fd.std_error), fd.n_samples.to_string()]);
    }
    out.table(dir, "derivative.csv", &["estimator", "mean", "std_error", "n_samples"], &rows)?;
    Ok(out)
}

fn remainder_scaling(config: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let obs = observable(config)?;
    let mut out = Outcome::default();
    let mc = McParams {
        n_paths: config.mc.n_paths,
        seed: config.seed,
    };
    let fit = quadratic_decay_fit(&s.model, &s.domain, &s.x0, &s.gamma, &obs, &config.epsilons, &s.grid, mc)?;
    out.value("slope", fit.slope);
    out.value("intercept", fit.intercept);
    out.check(Check::within("slope", fit.slope, SLOPE_RANGE.0, SLOPE_RANGE.1));
    let rows: Vec<Vec<String>> = fit
        .points
        .iter()
        .map(|p| {
            let b = &p.breakdown;
            vec![
                f(p.epsilon),
                f(p.gamma_v_norm),
                f(b.u_gamma.mean),
                f(b.u_0.mean),
                f(b.derivative.mean),
                f(b.remainder.mean),
                f(b.remainder.std_error),
                p.used.to_string(),
            ]
        })
        .collect();
    out.table(
        dir,
        "remainder.csv",
        &["epsilon", "gamma_v_norm", "u_gamma", "u_0", "derivative", "remainder", "remainder_std_error", "used"],
        &rows,
    )?;
    let plot: Vec<Vec<String>> = fit
        .points
        .iter()
        .filter(|p| p.used)
        .map(|p| vec![f(p.epsilon.ln()), f(p.breakdown.remainder.mean.abs().ln())])
        .collect();
    out.table(dir, "remainder_loglog.csv", &["log_epsilon", "log_abs_remainder"], &plot)?;
    Ok(out)
}

fn operator_response(config: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let grid = ulam_grid(config, &s)?;
    let mut out = Outcome::default();
    let params = kernel_params(config, config.seed);
    let ck = coupled_kernels(&s.model, &s.gamma, &config.epsilons, &grid, &params)?;
    let (p0, u0) = assemble_operators(&ck.base, &grid)?;
    let dp = ck.derivative.derivative_operator(config.time.t_end);

    let n = grid.n_cells();
    let row_mass_err = (0..n).map(|i| (ck.base.row_mass(i) - 1.0).abs()).fold(0.0, f64::max);
    out.check(Check::at_most("row_mass_error", row_mass_err, EXACT_TOL));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));
    let fv: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let gv: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let adjoint = (grid.inner(&p0.apply(&fv), &gv) - grid.inner(&fv, &u0.apply(&gv))).abs();
    out.check(Check::at_most("adjointness_error", adjoint, EXACT_TOL));
    let dk_mass = (0..n)
        .map(|i| {
            let se = ck.derivative.row_mass_std_error[i];
            if se > 0.0 {
                ck.derivative.row_mass(i).abs() / se
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    out.check(Check::at_most("dk_row_mass_sigmas", dk_mass, ROW_MASS_SIGMAS));

    let ball: Vec<PerturbationField> = if s.gamma.is_zero() {
        vec![s.gamma.clone()]
    } else {
        let unit = s.gamma.scaled(1.0 / s.gamma.v_norm());
        [0.0, BALL_RADIUS, -BALL_RADIUS, 0.5 * BALL_RADIUS, -0.5 * BALL_RADIUS]
            .iter()
            .map(|a| unit.scaled(*a))
            .collect()
    };
    let maxima = ball
        .iter()
        .map(|g| Ok(estimate_kernel(&s.model, g, &grid, &params)?.max_entry()))
        .collect::<Result<Vec<f64>>>()?;
    let hi = maxima.iter().cloned().fold(f64::MIN, f64::max);
    let lo = maxima.iter().cloned().fold(f64::MAX, f64::min);
    out.value("max_entry", maxima[0]);
    out.check(Check::at_most("max_entry_spread", (hi - lo) / lo, MAX_ENTRY_SPREAD));

    let mut ratios = Vec::new();
    for (eps, k) in ck.epsilons.iter().zip(&ck.perturbed) {
        let (pe, _) = assemble_operators(k, &grid)?;
        let mut edp = dp.clone();
        edp.matrix *= *eps;
        ratios.push(crate::ulam::operator_norm_residual(&p0, &pe, &edp, s.gamma.v_norm() * eps)?);
    }
    let monotone = ratios.windows(2).all(|w| w[1] < w[0]);
    out.check(Check::new(
        "residual_ratio_monotone",
        if monotone { 1.0 } else { 0.0 },
        "strictly decreasing",
        monotone,
    ));
    let last_over_first = ratios[ratios.len() - 1] / ratios[0];
    out.check(Check::at_most("residual_ratio_last_over_first", last_over_first, 0.5));
    let rows: Vec<Vec<String>> = ck
        .epsilons
        .iter()
        .zip(&ratios)
        .map(|(e, r)| vec![f(*e), f(s.gamma.v_norm() * e), f(*r)])
        .collect();
    out.table(dir, "residual.csv", &["epsilon", "gamma_v_norm", "ratio"], &rows)?;
    out.file(dir, "kernel.csv", |w| ck.base.write_csv(w))?;
    out.file(dir, "p0.csv", |w| p0.write_csv(w))?;
    out.file(dir, "dp.csv", |w| dp.write_csv(w))?;
    Ok(out)
}

fn closest(values: &[Complex64], target: Complex64) -> Complex64 {
    *values
        .iter()
        .min_by(|a, b| (*a - target).norm().total_cmp(&(*b - target).norm()))
        .expect("non-empty")
}

fn eigen_response(config: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let grid = ulam_grid(config, &s)?;
    let spec = config.eigen.clone().ok_or_else(|| Error::config("eigen", "missing"))?;
    let mut out = Outcome::default();
    let params = kernel_params(config, config.seed);
    let ck = coupled_kernels(&s.model, &s.gamma, &config.epsilons, &grid, &params)?;
    let (p0, _) = assemble_operators(&ck.base, &grid)?;
    let dp = ck.derivative.derivative_operator(config.time.t_end);
    let pairs = eigenpairs(&p0, spec.n_pairs)?;
    let pair = &pairs[spec.index - 1];
    let response = eigenvalue_response(&p0, &dp, pair)?;
    out.value("lambda_re", pair.value.re);
    out.value("lambda_im", pair.value.im);
    out.value("dlambda_re", response.dvalue.re);
    out.value("dlambda_im", response.dvalue.im);
    out.value("conditioning", response.conditioning);

    let mut leading_err = (pairs[0].value - 1.0).norm();
    let mut rows = Vec::new();
    let mut log_eps = Vec::new();
    let mut log_second = Vec::new();
    let fd_eps = spec.fd_epsilon.unwrap_or(*config.epsilons.last().expect("validated"));
    for (eps, k) in ck.epsilons.iter().zip(&ck.perturbed) {
        let (pe, _) = assemble_operators(k, &grid)?;
        let values: Vec<Complex64> = eigenpairs(&pe, spec.n_pairs)?.iter().map(|p| p.value).collect();
        let le = closest(&values, pair.value);
        let fd = (le - pair.value) / eps;
        let second = (le - pair.value - response.dvalue * eps).norm();
        log_eps.push(eps.ln());
        log_second.push(second.ln());
        if *eps == fd_eps {
            let rel = (fd - response.dvalue).norm() / response.dvalue.norm();
            out.value("finite_difference_re", fd.re);
            out.check(Check::at_most("response_vs_fd_relative", rel, RESPONSE_REL_TOL));
        }
        // Histogram kernel of the resimulated perturbed process.
        let resim = estimate_kernel(&s.model, &s.gamma.scaled(*eps), &grid, &params)?;
        let (pr, _) = assemble_operators(&resim, &grid)?;
        leading_err = leading_err.max((eigenpairs(&pr, 1)?[0].value - 1.0).norm());
        rows.push(vec![f(*eps), f(le.re), f(le.im), f(fd.re), f(fd.im), f(second)]);
    }
    out.check(Check::at_most("leading_eigenvalue_error", leading_err, LEADING_TOL));
    let (slope, _) = least_squares(&log_eps, &log_second);
    out.value("second_difference_slope", slope);
    out.check(Check::within("second_difference_slope", slope, SLOPE_RANGE.0, SLOPE_RANGE.1));
    out.table(dir, "response.csv", &["epsilon", "lambda_re", "lambda_im", "fd_re", "fd_im", "second_difference"], &rows)?;
    let eig_rows: Vec<Vec<String>> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| vec![(i + 1).to_string(), f(p.value.re), f(p.value.im), f(p.gap), f(p.residual)])
        .collect();
    out.table(dir, "eigen.csv", &["index", "re", "im", "gap", "residual"], &eig_rows)?;
    let mut header = vec!["cell".to_string()];
    header.extend((0..grid.dim()).map(|a| format!("x{a}")));
    header.extend((1..=pairs.len()).map(|k| format!("r{k}_re")));
    header.push("dvector_re".into());
    let centers = grid.centers();
    let vec_rows: Vec<Vec<String>> = (0..grid.n_cells())
        .map(|c| {
            let mut r = vec![c.to_string()];
            r.extend(centers[c].iter().map(|v| f(*v)));
            r.extend(pairs.iter().map(|p| f(p.right[c].re)));
            r.push(f(response.dvector[c].re));
            r
        })
        .collect();
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    out.table(dir, "eigenvectors.csv", &header_ref, &vec_rows)?;
    Ok(out)
}

fn coherent_sets(config: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let grid = ulam_grid(config, &s)?;
    let spec = config.coherent.clone().ok_or_else(|| Error::config("coherent", "missing"))?;
    let mut out = Outcome::default();
    let kernel = estimate_kernel(&s.model, &s.gamma, &grid, &kernel_params(config, config.seed))?;
    let (p, _) = assemble_operators(&kernel, &grid)?;
    let triplets = singular_triplets(&p, spec.n_triplets)?;
    out.value("sigma_1", triplets[0].value);
    if triplets.len() > 1 {
        out.value("sigma_2", triplets[1].value);
    }
    if let Some(tol) = spec.leading_tol {
        out.check(Check::at_most("sigma_1_error", (triplets[0].value - 1.0).abs(), tol));
    }
    if let Some(tol) = spec.constant_tol {
        // relative RMS distance to the best constant
        let dev = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt() / mean.abs()
        };
        let d = dev(&triplets[0].left).max(dev(&triplets[0].right));
        out.check(Check::at_most("leading_vectors_nonconstancy", d, tol));
    }
    if let Some(split) = spec.sign_change_at {
        if triplets.len() < 2 {
            return Err(Error::config("coherent.n_triplets", "need at least two triplets for the sign check"));
        }
        let v = &triplets[1].right;
        let centers = grid.centers();
        let side = |left: bool| -> Vec<f64> {
            centers
                .iter()
                .zip(v)
                .filter(|(c, _)| if left { c[0] < split - spec.sign_margin } else { c[0] > split + spec.sign_margin })
                .map(|(_, x)| *x)
                .collect()
        };
        let (l, r) = (side(true), side(false));
        let separated = !l.is_empty()
            && !r.is_empty()
            && ((l.iter().all(|x| *x < 0.0) && r.iter().all(|x| *x > 0.0))
                || (l.iter().all(|x| *x > 0.0) && r.iter().all(|x| *x < 0.0)));
        out.check(Check::new(
            "second_vector_sign_change",
            if separated { 1.0 } else { 0.0 },
            format!("opposite signs beyond {split} +- {}", spec.sign_margin),
            separated,
        ));
    }
    let sv_rows: Vec<Vec<String>> = triplets
        .iter()
        .enumerate()
        .map(|(i, t)| vec![(i + 1).to_string(), f(t.value)])
        .collect();
    out.table(dir, "singular.csv", &["index", "value"], &sv_rows)?;
    let centers = grid.centers();
    let mut header = vec!["cell".to_string()];
    header.extend((0..grid.dim()).map(|a| format!("x{a}")));
    for k in 1..=triplets.len() {
        header.push(format!("u{k}"));
        header.push(format!("v{k}"));
    }
    let rows: Vec<Vec<String>> = (0..grid.n_cells())
        .map(|c| {
            let mut r = vec![c.to_string()];
            r.extend(centers[c].iter().map(|v| f(*v)));
            for t in &triplets {
                r.push(f(t.left[c]));
                r.push(f(t.right[c]));
            }
            r
        })
        .collect();
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    out.table(dir, "singular_vectors.csv", &header_ref, &rows)?;
    Ok(out)
}

fn periodic_forcing(config: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let grid = ulam_grid(config, &s)?;
    let spec = config.periodic.clone().ok_or_else(|| Error::config("periodic", "missing"))?;
    let mut out = Outcome::default();
    let params = PeriodicParams {
        period: spec.period,
        n_phases: spec.n_phases,
        steps_per_phase: spec.steps_per_phase,
        n_paths_per_cell: config.mc.n_paths_per_cell,
        seed: config.seed,
    };
    let family = periodic_stationary_family(&s.model, &s.gamma, &grid, &params)?;
    let max_lead = family
        .leading_eigenvalues
        .iter()
        .map(|l| (l - 1.0).norm())
        .fold(0.0, f64::max);
    out.value("leading_eigenvalue_error", max_lead);
    out.value("phase_consistency_l1", family.consistency);

    let steps_per_period = spec.n_phases * spec.steps_per_phase;
    let one_period = TimeGrid::new(spec.period, steps_per_period)?;
    let pushed = transport_density(
        &s.model,
        &s.gamma,
        &grid,
        &family.densities[0],
        0.0,
        &one_period,
        spec.n_particles,
        derive_seed(config.seed, 3),
    )?;
    let diff: Vec<f64> = pushed.iter().zip(&family.densities[0]).map(|(a, b)| a - b).collect();
    let l1 = grid.l1_norm(&diff);
    out.check(Check::at_most("return_distance_l1", l1, spec.l1_tol));

    let component = config.observable.as_ref().map(|o| o.component()).unwrap_or(0);
    let g = move |_: f64, y: &[f64]| y[component];
    let spectral = ergodic_average(g, &family, &grid);
    let birkhoff = trajectory_average(
        &s.model,
        &s.gamma,
        &s.domain,
        &s.x0,
        g,
        spec.period,
        spec.n_periods,
        steps_per_period,
        derive_seed(config.seed, 4),
    )?;
    out.value("spectral_average", spectral);
    out.value("trajectory_average", birkhoff);
    out.check(Check::at_most("average_difference", (spectral - birkhoff).abs(), spec.average_tol));

    let centers = grid.centers();
    let mut rows = Vec::new();
    for (phase, density) in family.phases.iter().zip(&family.densities) {
        for (c, v) in density.iter().enumerate() {
            let mut r = vec![f(*phase), c.to_string()];
            r.extend(centers[c].iter().map(|x| f(*x)));
            r.push(f(*v));
            rows.push(r);
        }
    }
    let mut header = vec!["phase".to_string(), "cell".to_string()];
    header.extend((0..grid.dim()).map(|a| format!("x{a}")));
    header.push("density".into());
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    out.table(dir, "family.csv", &header_ref, &rows)?;
    let ret: Vec<Vec<String>> = (0..grid.n_cells())
        .map(|c| vec![c.to_string(), f(family.densities[0][c]), f(pushed[c])])
        .collect();
    out.table(dir, "period_return.csv", &["cell", "f0", "pushed"], &ret)?;
    Ok(out)
}

fn continuity_scan(config: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let s = setup(config)?;
    let obs = observable(config)?;
    let spec = config.continuity.clone().ok_or_else(|| Error::config("continuity", "missing"))?;
    let shift = spec.shift.build(s.model.dim(), &s.domain)?;
    let shifts: Vec<PerturbationField> = config.epsilons.iter().map(|e| shift.scaled(*e)).collect();
    let mut out = Outcome::default();
    let mc = McParams {
        n_paths: config.mc.n_paths,
        seed: config.seed,
    };
    let rows = derivative_continuity_scan(&s.model, &s.domain, &s.x0, &shifts, &s.gamma, &obs, &s.grid, mc)?;
    let diffs: Vec<f64> = rows.iter().map(|r| r.difference.mean.abs()).collect();
    let monotone = diffs.windows(2).all(|w| w[1] < w[0]);
    out.check(Check::new(
        "difference_decreasing",
        if monotone { 1.0 } else { 0.0 },
        "strictly decreasing with the shift norm",
        monotone,
    ));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                f(r.shift_v_norm),
                f(r.derivative.mean),
                f(r.derivative.std_error),
                f(r.difference.mean),
                f(r.difference.std_error),
            ]
        })
        .collect();
    out.table(
        dir,
        "continuity.csv",
        &["shift_v_norm", "derivative", "derivative_std_error", "difference", "difference_std_error"],
        &table,
    )?;
    Ok(out)
}

fn discontinuity(config: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let spec = config.discontinuity.clone().ok_or_else(|| Error::config("discontinuity", "missing"))?;
    let boxes = config.grid.ok_or_else(|| Error::config("grid", "missing"))?.boxes_per_axis;
    let mut out = Outcome::default();
    let rows = discontinuity_demo(
        &config.model,
        &config.domain()?,
        boxes,
        &kernel_params(config, config.seed),
        &spec.sigmas,
        &spec.widths,
        spec.offset,
        &spec.center,
    )?;
    let small = spec.sigmas[spec.sigmas.len() - 1];
    let large = spec.sigmas[0];
    let narrow = spec.widths[spec.widths.len() - 1];
    let pick = |sigma: f64| {
        rows.iter()
            .find(|r| r.sigma_noise == sigma && r.bump_width == narrow)
            .map(|r| r.distance)
            .expect("row present")
    };
    out.value("distance_small_noise", pick(small));
    out.value("distance_large_noise", pick(large));
    out.check(Check::at_least("distance_small_noise", pick(small), spec.min_distance));
    out.check(Check::at_most("distance_large_noise", pick(large), spec.max_distance));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![f(r.sigma_noise), f(r.bump_width), f(r.distance)])
        .collect();
    out.table(dir, "discontinuity.csv", &["sigma_noise", "bump_width", "distance"], &table)?;
    Ok(out)
}
