//! Drift derivatives of expected path functionals.
//!
//! `u(gamma) = E[g(X^gamma)]` is differentiated at `gamma = 0` through the
//! Girsanov weight, `Du(gamma) = E^0[g M^gamma]`, and checked against a
//! coupled central difference. The remainder `u(gamma) - u(0) - Du(gamma)`
//! is sampled pathwise as `g (Z - 1 - M)` on one base ensemble, so all three
//! terms share their paths.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::girsanov::{check_base, exp_weight, per_path, weights_at};
use crate::sde::{simulate_ensemble, Domain, PathEnsemble, PathView, PerturbationField, SdeModel, TimeGrid};

/// Sample mean with standard error `std / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl MCEstimate {
    /// Sequential (fixed-order) reduction, so results are bit-stable.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::Estimation("no samples".into()));
        }
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Ok(Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_samples: n,
        })
    }

    /// Sample standard deviation.
    pub fn std_dev(&self) -> f64 {
        self.std_error * (self.n_samples as f64).sqrt()
    }

    /// `|self - other| <= k * sqrt(se1^2 + se2^2)`.
    pub fn agrees_with(&self, other: &MCEstimate, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.std_error.hypot(other.std_error)
    }

    /// `|self - value| <= k * se`.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

impl fmt::Display for MCEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} ± {:.6} (n={})", self.mean, self.std_error, self.n_samples)
    }
}

pub type PathFn = Arc<dyn Fn(&PathView<'_>) -> f64 + Send + Sync>;
pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Eval {
    Path(PathFn),
    Marginal { time: f64, f: StateFn },
}

/// A bounded observable: either a functional of the whole path or a function
/// of the state at one grid time.
#[derive(Clone)]
pub struct Observable {
    name: String,
    eval: Eval,
    bound: f64,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("name", &self.name)
            .field("marginal_time", &self.marginal_time())
            .field("bound", &self.bound)
            .finish()
    }
}

impl Observable {
    pub fn path_functional(name: impl Into<String>, bound: f64, f: PathFn) -> Result<Self> {
        Self::build(name.into(), Eval::Path(f), bound)
    }

    pub fn marginal(name: impl Into<String>, time: f64, bound: f64, f: StateFn) -> Result<Self> {
        if !(time >= 0.0) {
            return Err(Error::InvalidInput(format!("marginal time must be >= 0, got {time}")));
        }
        Self::build(name.into(), Eval::Marginal { time, f }, bound)
    }

    fn build(name: String, eval: Eval, bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "observable `{name}` must declare a finite sup bound, got {bound}"
            )));
        }
        Ok(Self { name, eval, bound })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            name: format!("const({c})"),
            eval: Eval::Path(Arc::new(move |_| c)),
            bound: c.abs(),
        }
    }

    /// `x_component(X_t)^power`.
    pub fn marginal_power(time: f64, component: usize, power: i32, bound: f64) -> Result<Self> {
        Self::marginal(
            format!("X{component}_t^{power}@{time}"),
            time,
            bound,
            Arc::new(move |x| x[component].powi(power)),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn marginal_time(&self) -> Option<f64> {
        match self.eval {
            Eval::Marginal { time, .. } => Some(time),
            Eval::Path(_) => None,
        }
    }

    /// Grid index at which the Girsanov weights are taken: the observation
    /// time for marginals, the terminal time for path functionals.
    pub fn weight_index(&self, grid: &TimeGrid) -> Result<usize> {
        match self.eval {
            Eval::Marginal { time, .. } => grid.index_of(time),
            Eval::Path(_) => Ok(grid.n_steps()),
        }
    }

    pub fn evaluate(&self, path: &PathView<'_>) -> Result<f64> {
        let value = match &self.eval {
            Eval::Path(f) => f(path),
            Eval::Marginal { time, f } => f(path.state(path.grid.index_of(*time)?)),
        };
        if !(value.abs() <= self.bound) {
            return Err(Error::ObservableBound {
                value,
                bound: self.bound,
            });
        }
        Ok(value)
    }
}

/// Monte-Carlo sizing: number of paths and master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McParams {
    pub n_paths: usize,
    pub seed: u64,
}

/// Where the Ito weight of a derivative estimate is cut off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightHorizon {
    /// Observation time for marginals, terminal time otherwise.
    Observable,
    /// Always the terminal grid time.
    Terminal,
}

pub fn expectation(ensemble: &PathEnsemble, observable: &Observable) -> Result<MCEstimate> {
    let samples = per_path(ensemble, |p| observable.evaluate(&p))?;
    MCEstimate::from_samples(&samples)
}

/// `Du(gamma) = E^0[g M^gamma]` from a base ensemble.
pub fn frechet_derivative(
    base: &PathEnsemble,
    gamma: &PerturbationField,
    model: &SdeModel,
    observable: &Observable,
) -> Result<MCEstimate> {
    frechet_derivative_with(base, gamma, model, observable, WeightHorizon::Observable)
}

pub fn frechet_derivative_with(
    base: &PathEnsemble,
    gamma: &PerturbationField,
    model: &SdeModel,
    observable: &Observable,
    horizon: WeightHorizon,
) -> Result<MCEstimate> {
    check_base(base, model)?;
    let k = match horizon {
        WeightHorizon::Observable => observable.weight_index(&base.grid)?,
        WeightHorizon::Terminal => base.grid.n_steps(),
    };
    let samples = per_path(base, |p| {
        let g = observable.evaluate(&p)?;
        let (m, _) = weights_at(&p, gamma, model, k)?;
        Ok(g * m)
    })?;
    MCEstimate::from_samples(&samples)
}

/// Central difference `[u(h gamma) - u(-h gamma)] / 2h` with common Wiener
/// increments in both ensembles; the error bar is that of the pathwise
/// differences.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_derivative(
    model: &SdeModel,
    domain: &Domain,
    x0: &[f64],
    gamma: &PerturbationField,
    observable: &Observable,
    grid: &TimeGrid,
    h: f64,
    mc: McParams,
) -> Result<MCEstimate> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step h must be positive, got {h}")));
    }
    if gamma.is_zero() {
        return MCEstimate::from_samples(&vec![0.0; mc.n_paths]);
    }
    let plus = simulate_ensemble(model, domain, x0, &gamma.scaled(h), grid, mc.n_paths, mc.seed)?;
    let minus = simulate_ensemble(model, domain, x0, &gamma.scaled(-h), grid, mc.n_paths, mc.seed)?;
    let up = per_path(&plus, |p| observable.evaluate(&p))?;
    let down = per_path(&minus, |p| observable.evaluate(&p))?;
    let diffs: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    MCEstimate::from_samples(&diffs)
}

/// The three terms of the first-order expansion and its remainder, all from
/// the same base paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemainderBreakdown {
    pub u_gamma: MCEstimate,
    pub u_0: MCEstimate,
    pub derivative: MCEstimate,
    pub remainder: MCEstimate,
}

pub fn remainder_from_base(
    base: &PathEnsemble,
    gamma: &PerturbationField,
    model: &SdeModel,
    observable: &Observable,
) -> Result<RemainderBreakdown> {
    check_base(base, model)?;
    let k = observable.weight_index(&base.grid)?;
    let rows: Vec<Result<[f64; 4]>> = {
        use rayon::prelude::*;
        (0..base.n_paths())
            .into_par_iter()
            .map(|i| {
                let p = base.path(i);
                let g = observable.evaluate(&p)?;
                let (m, qv) = weights_at(&p, gamma, model, k)?;
                let z = exp_weight(m, qv)?;
                Ok([g * z, g, g * m, g * (z - 1.0 - m)])
            })
            .collect()
    };
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let column = |c: usize| MCEstimate::from_samples(&rows.iter().map(|r| r[c]).collect::<Vec<_>>());
    Ok(RemainderBreakdown {
        u_gamma: column(0)?,
        u_0: column(1)?,
        derivative: column(2)?,
        remainder: column(3)?,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn remainder_breakdown(
    model: &SdeModel,
    domain: &Domain,
    x0: &[f64],
    gamma: &PerturbationField,
    observable: &Observable,
    grid: &TimeGrid,
    mc: McParams,
) -> Result<RemainderBreakdown> {
    let base = simulate_ensemble(model, domain, x0, &PerturbationField::zero(model.dim()), grid, mc.n_paths, mc.seed)?;
    remainder_from_base(&base, gamma, model, observable)
}

/// `r(gamma) = u(gamma) - u(0) - Du(gamma)`.
#[allow(clippy::too_many_arguments)]
pub fn remainder(
    model: &SdeModel,
    domain: &Domain,
    x0: &[f64],
    gamma: &PerturbationField,
    observable: &Observable,
    grid: &TimeGrid,
    mc: McParams,
) -> Result<MCEstimate> {
    Ok(remainder_breakdown(model, domain, x0, gamma, observable, grid, mc)?.remainder)
}

/// A remainder point is used in the fit only if it stands out of the noise
/// by this many standard errors.
pub const DECAY_SIGNIFICANCE: f64 = 3.0;

#[derive(Debug, Clone, Serialize)]
pub struct DecayPoint {
    pub epsilon: f64,
    pub gamma_v_norm: f64,
    pub breakdown: RemainderBreakdown,
    /// `stderr / |r|`
    pub noise_ratio: f64,
    pub used: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<DecayPoint>,
}

pub(crate) fn validate_epsilons(epsilons: &[f64], min_len: usize) -> Result<()> {
    if epsilons.len() < min_len {
        return Err(Error::InvalidInput(format!(
            "need at least {min_len} epsilons, got {}",
            epsilons.len()
        )));
    }
    if epsilons.iter().any(|e| !(*e > 0.0)) || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput(format!(
            "epsilons must be positive and strictly decreasing, got {epsilons:?}"
        )));
    }
    Ok(())
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits `log |r(eps * direction)|` against `log eps`. Points whose remainder
/// is not significant are flagged and left out.
#[allow(clippy::too_many_arguments)]
pub fn quadratic_decay_fit(
    model: &SdeModel,
    domain: &Domain,
    x0: &[f64],
    direction: &PerturbationField,
    observable: &Observable,
    epsilons: &[f64],
    grid: &TimeGrid,
    mc: McParams,
) -> Result<DecayFit> {
    validate_epsilons(epsilons, 3)?;
    let base = simulate_ensemble(model, domain, x0, &PerturbationField::zero(model.dim()), grid, mc.n_paths, mc.seed)?;
    let mut points = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let gamma = direction.scaled(eps);
        let breakdown = remainder_from_base(&base, &gamma, model, observable)?;
        let r = breakdown.remainder;
        let noise_ratio = r.std_error / r.mean.abs();
        points.push(DecayPoint {
            epsilon: eps,
            gamma_v_norm: gamma.v_norm(),
            breakdown,
            noise_ratio,
            used: r.mean.abs() > DECAY_SIGNIFICANCE * r.std_error,
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.used)
        .map(|p| (p.epsilon.ln(), p.breakdown.remainder.mean.abs().ln()))
        .unzip();
    if x.len() < 3 {
        return Err(Error::InconclusiveFit { usable: x.len() });
    }
    let (slope, intercept) = least_squares(&x, &y);
    Ok(DecayFit {
        slope,
        intercept,
        points,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityRow {
    pub shift_id: String,
    pub shift_v_norm: f64,
    pub derivative: MCEstimate,
    /// `D(b + b') - D(b)`, estimated pathwise on common Wiener increments.
    pub difference: MCEstimate,
}

/// Derivative in `direction` evaluated at the shifted base drifts `b + b'`,
/// compared with the derivative at `b`.
#[allow(clippy::too_many_arguments)]
pub fn derivative_continuity_scan(
    model: &SdeModel,
    domain: &Domain,
    x0: &[f64],
    shifts: &[PerturbationField],
    direction: &PerturbationField,
    observable: &Observable,
    grid: &TimeGrid,
    mc: McParams,
) -> Result<Vec<ContinuityRow>> {
    let zero = PerturbationField::zero(model.dim());
    let pathwise = |m: &SdeModel| -> Result<Vec<f64>> {
        let base = simulate_ensemble(m, domain, x0, &zero, grid, mc.n_paths, mc.seed)?;
        let k = observable.weight_index(grid)?;
        per_path(&base, |p| {
            let g = observable.evaluate(&p)?;
            let (w, _) = weights_at(&p, direction, m, k)?;
            Ok(g * w)
        })
    };
    let reference = pathwise(model)?;
    shifts
        .iter()
        .map(|shift| {
            let shifted = if shift.is_zero() {
                model.clone()
            } else {
                model.with_drift_shift(shift)?
            };
            let samples = if shift.is_zero() {
                reference.clone()
            } else {
                pathwise(&shifted)?
            };
            let diffs: Vec<f64> = samples.iter().zip(&reference).map(|(a, b)| a - b).collect();
            Ok(ContinuityRow {
                shift_id: shift.id().to_string(),
                shift_v_norm: shift.v_norm(),
                derivative: MCEstimate::from_samples(&samples)?,
                difference: MCEstimate::from_samples(&diffs)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(n: usize, seed: u64) -> (SdeModel, PathEnsemble) {
        let m = SdeModel::brownian(1, 1.0, 1.0).unwrap();
        let g = TimeGrid::new(1.0, 20).unwrap();
        let e = simulate_ensemble(&m, &Domain::unbounded(1), &[0.0], &PerturbationField::zero(1), &g, n, seed).unwrap();
        (m, e)
    }

    #[test]
    fn mc_estimate_stats() {
        let e = MCEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.mean, 2.5);
        let var: f64 = [1.5f64, 0.5, 0.5, 1.5].iter().map(|d| d * d).sum::<f64>() / 3.0;
        assert!((e.std_error - (var / 4.0).sqrt()).abs() < 1e-15);
        assert!(MCEstimate::from_samples(&[]).is_err());
    }

    #[test]
    fn constant_observable_has_zero_error() {
        let (_, e) = bm(100, 1);
        let est = expectation(&e, &Observable::constant(1.0)).unwrap();
        assert_eq!((est.mean, est.std_error), (1.0, 0.0));
    }

    #[test]
    fn zero_direction_derivative_and_remainder_vanish() {
        let (m, e) = bm(500, 2);
        let g = Observable::marginal_power(1.0, 0, 2, 100.0).unwrap();
        let z = PerturbationField::zero(1);
        let d = frechet_derivative(&e, &z, &m, &g).unwrap();
        assert_eq!((d.mean, d.std_error), (0.0, 0.0));
        let r = remainder_from_base(&e, &z, &m, &g).unwrap().remainder;
        assert_eq!((r.mean, r.std_error), (0.0, 0.0));
    }

    #[test]
    fn derivative_is_linear_in_direction() {
        let (m, e) = bm(2000, 3);
        let g = Observable::marginal_power(1.0, 0, 2, 100.0).unwrap();
        let gamma = PerturbationField::gaussian_bump(vec![0.0], 0.5, vec![1.0]).unwrap();
        let d1 = frechet_derivative(&e, &gamma, &m, &g).unwrap();
        let d3 = frechet_derivative(&e, &gamma.scaled(-3.0), &m, &g).unwrap();
        assert!((d3.mean + 3.0 * d1.mean).abs() < 1e-12 * d1.mean.abs().max(1.0));
    }

    #[test]
    fn unbounded_observables_are_rejected() {
        assert!(Observable::marginal("x", 1.0, f64::INFINITY, Arc::new(|x| x[0])).is_err());
        let (_, e) = bm(50, 4);
        let tight = Observable::marginal_power(1.0, 0, 1, 1e-6).unwrap();
        assert!(matches!(expectation(&e, &tight), Err(Error::ObservableBound { .. })));
    }

    #[test]
    fn perturbed_ensembles_are_not_base() {
        let m = SdeModel::brownian(1, 1.0, 1.0).unwrap();
        let g = TimeGrid::new(1.0, 10).unwrap();
        let e = simulate_ensemble(&m, &Domain::unbounded(1), &[0.0], &PerturbationField::constant(vec![1.0]), &g, 10, 1)
            .unwrap();
        let obs = Observable::constant(1.0);
        assert!(frechet_derivative(&e, &PerturbationField::constant(vec![1.0]), &m, &obs).is_err());
    }

    #[test]
    fn epsilon_validation() {
        assert!(validate_epsilons(&[0.4, 0.2, 0.1], 3).is_ok());
        assert!(validate_epsilons(&[0.1, 0.2, 0.4], 3).is_err());
        assert!(validate_epsilons(&[0.4, 0.2], 3).is_err());
        assert!(validate_epsilons(&[0.4, 0.0, -0.1], 3).is_err());
    }

    #[test]
    fn affine_observable_fit_is_inconclusive() {
        let m = SdeModel::brownian(1, 1.0, 1.0).unwrap();
        let g = TimeGrid::new(1.0, 10).unwrap();
        let obs = Observable::marginal_power(1.0, 0, 1, 100.0).unwrap();
        let err = quadratic_decay_fit(
            &m,
            &Domain::unbounded(1),
            &[0.0],
            &PerturbationField::constant(vec![1.0]),
            &obs,
            &[0.4, 0.2, 0.1],
            &g,
            McParams { n_paths: 20_000, seed: 5 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::InconclusiveFit { .. }));
    }

    #[test]
    fn least_squares_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let (s, i) = least_squares(&x, &y);
        assert!((s - 2.0).abs() < 1e-12 && (i + 1.0).abs() < 1e-12);
    }
}
