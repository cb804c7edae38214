//! Eigen- and singular-value decompositions of Ulam operators, first-order
//! spectral response, and stationary families of periodically forced systems.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::sde::{integrate, path_rng, Domain, PerturbationField, SdeModel, TimeGrid};
use crate::ulam::{assemble_operators, estimate_kernel, Grid, KernelParams, OperatorKind, UlamOperator};

/// Eigenpair residual tolerance relative to `||A||`.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Pairs closer than this (relative to `||A||`) to another eigenvalue are
/// treated as not simple.
pub const SIMPLICITY_GAP: f64 = 1e-6;
/// Allowed deviation of the period operator's leading eigenvalue from 1.
pub const PERIOD_EIGENVALUE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: Complex64,
    /// Unit norm in L^2(Lebesgue); largest-magnitude entry real positive.
    pub right: Vec<Complex64>,
    /// Scaled so that `vol * sum_i left_i right_i = 1`.
    pub left: Vec<Complex64>,
    pub gap: f64,
    pub residual: f64,
    /// Gap below the simplicity threshold.
    pub degenerate: bool,
}

impl EigenPair {
    pub fn right_re(&self) -> Vec<f64> {
        self.right.iter().map(|c| c.re).collect()
    }
}

fn to_complex(a: &DMatrix<f64>) -> DMatrix<Complex64> {
    a.map(|v| Complex64::new(v, 0.0))
}

fn bilinear(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse iteration for the eigenvector of `a` at (known) eigenvalue `lambda`.
fn inverse_iteration(a: &DMatrix<Complex64>, lambda: Complex64, scale: f64) -> Result<(DVector<Complex64>, f64)> {
    let n = a.nrows();
    let mut shift = lambda + Complex64::new(scale * 1e-13, 0.0);
    let mut lu = (a - DMatrix::identity(n, n) * shift).lu();
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 + ((i as f64 * 0.618_033_988_7).fract() - 0.5), 0.0));
    v /= Complex64::new(v.norm(), 0.0);
    let mut residual = f64::INFINITY;
    for attempt in 0..60 {
        let w = match lu.solve(&v) {
            Some(w) if w.iter().all(|c| c.re.is_finite() && c.im.is_finite()) && w.norm() > 0.0 => w,
            _ => {
                // Exactly singular shift: nudge and refactor.
                shift += Complex64::new(scale * 1e-11 * (attempt + 1) as f64, 0.0);
                lu = (a - DMatrix::identity(n, n) * shift).lu();
                continue;
            }
        };
        v = &w / Complex64::new(w.norm(), 0.0);
        residual = (a * &v - &v * lambda).norm();
        if residual <= 1e-12 * scale {
            break;
        }
    }
    Ok((v, residual))
}

fn sorted_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let schur = Schur::try_new(a.clone(), 1e-14, 100_000).ok_or(Error::NonConvergence { residual: f64::NAN })?;
    let mut values: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| {
        y.norm()
            .total_cmp(&x.norm())
            .then(y.re.total_cmp(&x.re))
            .then(y.im.total_cmp(&x.im))
    });
    Ok(values)
}

/// The `k` eigenpairs of largest modulus, sorted by `|value|` descending.
pub fn eigenpairs(op: &UlamOperator, k: usize) -> Result<Vec<EigenPair>> {
    eigenpairs_of(&op.matrix, op.box_volume, k)
}

pub fn eigenpairs_of(a: &DMatrix<f64>, box_volume: f64, k: usize) -> Result<Vec<EigenPair>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    if k > n {
        return Err(Error::InvalidInput(format!("asked for {k} eigenpairs of a {n}x{n} matrix")));
    }
    let scale = spectral_norm(a).max(f64::MIN_POSITIVE);
    let values = sorted_eigenvalues(a)?;
    let ac = to_complex(a);
    let at = ac.transpose();
    let mut out = Vec::with_capacity(k);
    for (idx, &lambda) in values.iter().take(k).enumerate() {
        let gap = values
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != idx)
            .map(|(_, v)| (v - lambda).norm())
            .fold(f64::INFINITY, f64::min);
        let (rv, residual) = inverse_iteration(&ac, lambda, scale)?;
        if residual > RESIDUAL_TOL * scale {
            return Err(Error::NonConvergence { residual });
        }
        let (lv, _) = inverse_iteration(&at, lambda, scale)?;
        let mut right: Vec<Complex64> = rv.iter().copied().collect();
        let norm = (box_volume * right.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt();
        let pivot = right
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |(bi, bm), (i, c)| if c.norm() > bm * (1.0 + 1e-12) { (i, c.norm()) } else { (bi, bm) })
            .0;
        let phase = right[pivot] / right[pivot].norm();
        for c in right.iter_mut() {
            *c /= phase * norm;
        }
        let mut left: Vec<Complex64> = lv.iter().copied().collect();
        let pairing = bilinear(&left, &right) * box_volume;
        let degenerate = gap < SIMPLICITY_GAP * scale || pairing.norm() < 1e-12;
        if pairing.norm() >= 1e-12 {
            for c in left.iter_mut() {
                *c /= pairing;
            }
        }
        out.push(EigenPair {
            value: lambda,
            right,
            left,
            gap,
            residual,
            degenerate,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResponse {
    pub dvalue: Complex64,
    pub dvector: Vec<Complex64>,
    /// `1 / gap`
    pub conditioning: f64,
}

/// First-order change of a simple eigenpair of `p0` along `dp`:
/// `dlambda = <l, DP r> / <l, r>`, and the eigenvector correction solving
/// `(P0 - lambda) v = -(DP - dlambda) r` with `<l, v> = 0`.
pub fn eigenvalue_response(p0: &UlamOperator, dp: &UlamOperator, pair: &EigenPair) -> Result<SpectralResponse> {
    let n = p0.n_cells();
    if dp.n_cells() != n || pair.right.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: dp.n_cells(),
        });
    }
    if pair.degenerate {
        return Err(Error::DegenerateEigenvalue { index: 0, gap: pair.gap });
    }
    let a = to_complex(&p0.matrix);
    let d = to_complex(&dp.matrix);
    let r = DVector::from_column_slice(&pair.right);
    let l = DVector::from_column_slice(&pair.left);
    let dr = &d * &r;
    let dvalue = l.iter().zip(dr.iter()).map(|(x, y)| x * y).sum::<Complex64>()
        / l.iter().zip(r.iter()).map(|(x, y)| x * y).sum::<Complex64>();

    // Bordered system [[A - lambda, r], [l^T, 0]] [v; mu] = [-(D - dlambda) r; 0].
    let mut border = DMatrix::<Complex64>::zeros(n + 1, n + 1);
    border
        .view_mut((0, 0), (n, n))
        .copy_from(&(&a - DMatrix::identity(n, n) * pair.value));
    for i in 0..n {
        border[(i, n)] = r[i];
        border[(n, i)] = l[i];
    }
    let mut rhs = DVector::<Complex64>::zeros(n + 1);
    for i in 0..n {
        rhs[i] = -(dr[i] - dvalue * r[i]);
    }
    let sol = border
        .lu()
        .solve(&rhs)
        .ok_or(Error::DegenerateEigenvalue { index: 0, gap: pair.gap })?;
    Ok(SpectralResponse {
        dvalue,
        dvector: sol.iter().take(n).copied().collect(),
        conditioning: 1.0 / pair.gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularTriplet {
    pub value: f64,
    /// Unit L^2(Lebesgue) norm.
    pub left: Vec<f64>,
    /// Unit L^2(Lebesgue) norm; largest-magnitude entry positive.
    pub right: Vec<f64>,
}

/// Leading `k` singular triplets, `P right = value * left`. With uniform cell
/// volumes the L^2(Lebesgue) singular values equal the Euclidean ones.
pub fn singular_triplets(op: &UlamOperator, k: usize) -> Result<Vec<SingularTriplet>> {
    let n = op.n_cells();
    if k > n {
        return Err(Error::InvalidInput(format!("asked for {k} singular triplets of a {n}x{n} matrix")));
    }
    let svd = nalgebra::linalg::SVD::try_new(op.matrix.clone(), true, true, 1e-14, 100_000)
        .ok_or(Error::NonConvergence { residual: f64::NAN })?;
    let u = svd.u.as_ref().expect("requested");
    let vt = svd.v_t.as_ref().expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = 1.0 / op.box_volume.sqrt();
    Ok(order
        .into_iter()
        .take(k)
        .map(|c| {
            let mut left: Vec<f64> = u.column(c).iter().map(|v| v * s).collect();
            let mut right: Vec<f64> = vt.row(c).iter().map(|v| v * s).collect();
            let pivot = right
                .iter()
                .enumerate()
                .fold((0usize, 0.0f64), |(bi, bm), (i, v)| if v.abs() > bm * (1.0 + 1e-12) { (i, v.abs()) } else { (bi, bm) })
                .0;
            if right[pivot] < 0.0 {
                right.iter_mut().for_each(|v| *v = -*v);
                left.iter_mut().for_each(|v| *v = -*v);
            }
            SingularTriplet {
                value: svd.singular_values[c],
                left,
                right,
            }
        })
        .collect())
}

/// First-order change of a simple singular value along `dp`: `<u, DP v>`.
pub fn singular_value_response(dp: &UlamOperator, triplet: &SingularTriplet) -> f64 {
    let v = DVector::from_column_slice(&triplet.right);
    let dv = &dp.matrix * v;
    dp.box_volume * triplet.left.iter().zip(dv.iter()).map(|(a, b)| a * b).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodicParams {
    pub period: f64,
    pub n_phases: usize,
    pub steps_per_phase: usize,
    pub n_paths_per_cell: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PeriodicFamily {
    pub period: f64,
    pub phases: Vec<f64>,
    /// Densities `f_s` (cell values, integrating to 1), one per phase.
    pub densities: Vec<Vec<f64>>,
    /// Per-phase-step Perron–Frobenius operators `P_{s_m, s_{m+1}}`.
    pub step_operators: Vec<UlamOperator>,
    pub leading_eigenvalues: Vec<Complex64>,
    /// `max_m ||P_{s_m, s_{m+1}} f_{s_m} - f_{s_{m+1}}||_{L^1}`
    pub consistency: f64,
}

/// Seed of the kernel run for phase `m`.
pub fn phase_seed(seed: u64, m: usize) -> u64 {
    seed ^ (m as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Product `P_{m-1} ... P_0 P_{n-1} ... P_m`: one period starting at phase `m`
/// (later steps multiply from the left).
pub fn period_operator(steps: &[UlamOperator], m: usize) -> DMatrix<f64> {
    let n = steps.len();
    let size = steps[0].n_cells();
    (0..n).fold(DMatrix::identity(size, size), |acc, s| &steps[(m + s) % n].matrix * acc)
}

/// Stationary family of densities of a period-`tau` system: `f_s` is the
/// fixed point of the one-period operator started at phase `s`.
pub fn periodic_stationary_family(
    model: &SdeModel,
    gamma: &PerturbationField,
    grid: &Grid,
    params: &PeriodicParams,
) -> Result<PeriodicFamily> {
    if params.n_phases == 0 || params.steps_per_phase == 0 {
        return Err(Error::InvalidInput("need at least one phase and one step per phase".into()));
    }
    let dt_phase = params.period / params.n_phases as f64;
    let phases: Vec<f64> = (0..params.n_phases).map(|m| m as f64 * dt_phase).collect();
    let step_operators = phases
        .iter()
        .enumerate()
        .map(|(m, &s)| {
            let kp = KernelParams::new(dt_phase, params.steps_per_phase, params.n_paths_per_cell, phase_seed(params.seed, m))
                .starting_at(s);
            let kernel = estimate_kernel(model, gamma, grid, &kp)?;
            Ok(assemble_operators(&kernel, grid)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    family_from_steps(params.period, phases, step_operators, grid)
}

pub(crate) fn family_from_steps(
    period: f64,
    phases: Vec<f64>,
    step_operators: Vec<UlamOperator>,
    grid: &Grid,
) -> Result<PeriodicFamily> {
    let vol = grid.box_volume();
    let mut densities = Vec::with_capacity(phases.len());
    let mut leading = Vec::with_capacity(phases.len());
    for m in 0..phases.len() {
        let a = period_operator(&step_operators, m);
        let pair = eigenpairs_of(&a, vol, 1)?.remove(0);
        if (pair.value - Complex64::new(1.0, 0.0)).norm() > PERIOD_EIGENVALUE_TOL {
            return Err(Error::Discretization { value: pair.value.re });
        }
        let f = pair.right_re();
        let mass = vol * f.iter().sum::<f64>();
        densities.push(f.iter().map(|v| v / mass).collect::<Vec<f64>>());
        leading.push(pair.value);
    }
    let consistency = (0..phases.len())
        .map(|m| {
            let pushed = step_operators[m].apply(&densities[m]);
            let next = &densities[(m + 1) % phases.len()];
            grid.l1_norm(&pushed.iter().zip(next).map(|(a, b)| a - b).collect::<Vec<_>>())
        })
        .fold(0.0f64, f64::max);
    Ok(PeriodicFamily {
        period,
        phases,
        densities,
        step_operators,
        leading_eigenvalues: leading,
        consistency,
    })
}

/// `(1/T) int_0^T int g(tau, y) f_tau(y) dy dtau`: periodic trapezoid in the
/// phase, midpoint rule in space.
pub fn ergodic_average<G: Fn(f64, &[f64]) -> f64>(g: G, family: &PeriodicFamily, grid: &Grid) -> f64 {
    let centers = grid.centers();
    let per_phase: Vec<f64> = family
        .phases
        .iter()
        .zip(&family.densities)
        .map(|(&s, f)| grid.box_volume() * centers.iter().zip(f).map(|(c, v)| g(s, c) * v).sum::<f64>())
        .collect();
    // Periodic trapezoid on a uniform phase grid is the plain mean.
    per_phase.iter().sum::<f64>() / per_phase.len() as f64
}

/// Long-trajectory time average `(1/t) int_0^t g(tau mod T, X_tau) dtau`
/// (left-point rule), over `n_periods` periods.
#[allow(clippy::too_many_arguments)]
pub fn trajectory_average<G: Fn(f64, &[f64]) -> f64>(
    model: &SdeModel,
    gamma: &PerturbationField,
    domain: &Domain,
    x0: &[f64],
    g: G,
    period: f64,
    n_periods: usize,
    steps_per_period: usize,
    seed: u64,
) -> Result<f64> {
    let grid = TimeGrid::new(period * n_periods as f64, steps_per_period * n_periods)?;
    let model = model.clone().with_horizon(model.horizon().max(grid.t_end()));
    let mut rng = path_rng(seed, 0);
    let sqrt_dt = grid.dt().sqrt();
    let mut acc = 0.0;
    integrate(
        &model,
        domain,
        x0,
        gamma,
        0.0,
        &grid,
        |dw| {
            use rand::Rng;
            for w in dw.iter_mut() {
                *w = sqrt_dt * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        },
        |step| {
            let phase = (step.index % steps_per_period) as f64 * grid.dt();
            acc += g(phase, step.state) * step.dt;
            Ok(())
        },
    )?;
    Ok(acc / grid.t_end())
}

/// Monte-Carlo push-forward of a cell density: particles drawn from `density`
/// (uniformly within cells), moved over `[start_time, start_time + t]` and
/// binned. Independent of any Ulam matrix.
#[allow(clippy::too_many_arguments)]
pub fn transport_density(
    model: &SdeModel,
    gamma: &PerturbationField,
    grid: &Grid,
    density: &[f64],
    start_time: f64,
    time: &TimeGrid,
    n_particles: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::Rng;
    use rayon::prelude::*;

    let n = grid.n_cells();
    if density.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: density.len(),
        });
    }
    if n_particles == 0 || density.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidInput("need particles and a nonnegative density".into()));
    }
    let mut cdf: Vec<f64> = density
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let total = *cdf.last().unwrap_or(&0.0);
    if !(total > 0.0) {
        return Err(Error::InvalidInput("density has no mass".into()));
    }
    cdf.iter_mut().for_each(|c| *c /= total);
    let (lower, upper) = grid.domain().bounds().ok_or(Error::UnsupportedDomain("box domain required".into()))?;
    let widths: Vec<f64> = lower
        .iter()
        .zip(upper)
        .map(|(a, b)| (b - a) / grid.boxes_per_axis() as f64)
        .collect();
    let sqrt_dt = time.dt().sqrt();
    let cells = (0..n_particles)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p as u64);
            let u: f64 = rng.random();
            let cell = cdf.partition_point(|c| *c < u).min(n - 1);
            let x0: Vec<f64> = grid
                .center(cell)
                .iter()
                .zip(&widths)
                .map(|(c, w)| c + w * (rng.random::<f64>() - 0.5))
                .collect();
            let end = integrate(
                model,
                grid.domain(),
                &x0,
                gamma,
                start_time,
                time,
                |dw| {
                    for w in dw.iter_mut() {
                        *w = sqrt_dt * rng.sample::<f64, _>(rand_distr::StandardNormal);
                    }
                },
                |_| Ok(()),
            )?;
            Ok(grid.cell_of(&end))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut out = vec![0.0; n];
    let w = 1.0 / (n_particles as f64 * grid.box_volume());
    for c in cells {
        out[c] += w;
    }
    Ok(out)
}

/// Koopman operator from a Perron–Frobenius one (transpose under the uniform
/// volume inner product).
pub fn koopman_of(p: &UlamOperator) -> UlamOperator {
    UlamOperator {
        matrix: p.matrix.transpose(),
        kind: OperatorKind::Koopman,
        ..p.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(m: DMatrix<f64>, vol: f64) -> UlamOperator {
        UlamOperator {
            matrix: m,
            kind: OperatorKind::PerronFrobenius,
            t: 1.0,
            gamma_id: "test".into(),
            box_volume: vol,
        }
    }

    #[test]
    fn identity_is_degenerate() {
        let pairs = eigenpairs(&op(DMatrix::identity(3, 3), 1.0), 3).unwrap();
        assert!(pairs.iter().all(|p| (p.value.re - 1.0).abs() < 1e-12 && p.degenerate));
        let sv = singular_triplets(&op(DMatrix::identity(3, 3), 1.0), 3).unwrap();
        assert!(sv.iter().all(|t| (t.value - 1.0).abs() < 1e-12));
        assert!(eigenvalue_response(&op(DMatrix::identity(3, 3), 1.0), &op(DMatrix::zeros(3, 3), 1.0), &pairs[0]).is_err());
    }

    #[test]
    fn pairs_are_normalized_and_biorthogonal() {
        let a = DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.2, 0.5, 0.2, 0.2, 0.2, 0.7]).transpose();
        let vol = 0.5;
        let pairs = eigenpairs(&op(a.clone(), vol), 3).unwrap();
        assert!((pairs[0].value.re - 1.0).abs() < 1e-12);
        for (i, p) in pairs.iter().enumerate() {
            let n2: f64 = vol * p.right.iter().map(|c| c.norm_sqr()).sum::<f64>();
            assert!((n2 - 1.0).abs() < 1e-12);
            for (j, q) in pairs.iter().enumerate() {
                let ip = vol * bilinear(&p.left, &q.right);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ip - Complex64::new(expect, 0.0)).norm() < 1e-8, "{i} {j} {ip}");
            }
        }
    }

    #[test]
    fn response_matches_finite_difference_on_fixed_matrices() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.1, 0.3, 0.6, 0.2, 0.2, 0.2, 0.7]);
        let d = DMatrix::from_row_slice(3, 3, &[0.1, -0.2, 0.0, 0.05, 0.1, 0.3, -0.15, 0.1, -0.3]);
        let p0 = op(a.clone(), 1.0);
        let pairs = eigenpairs(&p0, 3).unwrap();
        let eps = 1e-6;
        let pe = eigenpairs(&op(&a + &d * eps, 1.0), 3).unwrap();
        for k in 0..3 {
            let resp = eigenvalue_response(&p0, &op(d.clone(), 1.0), &pairs[k]).unwrap();
            let fd = (pe[k].value - pairs[k].value) / eps;
            assert!((fd - resp.dvalue).norm() < 1e-4, "{k}: {fd} vs {}", resp.dvalue);
            let orth: Complex64 = bilinear(&pairs[k].left, &resp.dvector);
            assert!(orth.norm() < 1e-10);
        }
        let zero = eigenvalue_response(&p0, &op(DMatrix::zeros(3, 3), 1.0), &pairs[1]).unwrap();
        assert_eq!(zero.dvalue, Complex64::new(0.0, 0.0));
        assert!(zero.dvector.iter().all(|c| c.norm() < 1e-14));
    }

    #[test]
    fn complex_pairs_are_resolved() {
        // rotation-scaling block plus a real mode
        let a = DMatrix::from_row_slice(3, 3, &[0.0, -0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.9]);
        let pairs = eigenpairs(&op(a.clone(), 1.0), 3).unwrap();
        assert!((pairs[0].value.re - 0.9).abs() < 1e-12);
        for p in &pairs[1..] {
            assert!((p.value.norm() - 0.5).abs() < 1e-12 && p.value.im.abs() > 0.4);
            assert!(p.residual < 1e-10);
        }
    }

    #[test]
    fn singular_response_matches_finite_difference() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.1, 0.3, 0.6, 0.2, 0.2, 0.2, 0.7]);
        let d = DMatrix::from_row_slice(3, 3, &[0.1, -0.2, 0.0, 0.05, 0.1, 0.3, -0.15, 0.1, -0.3]);
        let vol = 0.25;
        let t0 = singular_triplets(&op(a.clone(), vol), 3).unwrap();
        let eps = 1e-6;
        let t1 = singular_triplets(&op(&a + &d * eps, vol), 3).unwrap();
        for k in 0..3 {
            let ds = singular_value_response(&op(d.clone(), vol), &t0[k]);
            assert!(((t1[k].value - t0[k].value) / eps - ds).abs() < 1e-4);
        }
    }
}
