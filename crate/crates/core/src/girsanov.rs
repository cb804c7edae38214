//! Girsanov weights along discretized base paths.
//!
//! For a base path `X` (simulated with drift `b`, no perturbation) and a
//! direction `gamma`, the weight increments are
//!
//! ```text
//! dM    = (sigma^-1 gamma)^T sigma^-1 (dX - b dt)
//! d<M>  = |sigma^-1 gamma|^2 dt
//! Z     = exp(M - <M>/2)
//! ```
//!
//! evaluated at the left endpoint of each step. Off the boundary
//! `dX - b dt = sigma dW`. On a reflected step the state increment carries the
//! reflection jump, so the pre-reflection noise increment `sigma dW` is used
//! instead. With this choice `Z` is exactly the likelihood ratio between the
//! discrete chains with drifts `b + gamma` and `b`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sde::{PathEnsemble, PathView, PerturbationField, SdeModel, Step};
use crate::sensitivity::{MCEstimate, Observable};

/// Largest admissible condition number of `sigma sigma^T`.
pub const CONDITION_LIMIT: f64 = 1e8;

/// Largest exponent accepted before `exp` overflows.
const EXP_LIMIT: f64 = 709.0;

/// Per-step series of the Ito weight, its quadratic variation and the
/// exponential martingale. Index `k` refers to grid time `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovSeries {
    pub m: Vec<f64>,
    pub qv: Vec<f64>,
    pub z: Vec<f64>,
}

impl GirsanovSeries {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Accumulates `(dM, d<M>)` step by step.
pub(crate) struct WeightIntegrand<'a> {
    model: &'a SdeModel,
    gamma: &'a PerturbationField,
    g: Vec<f64>,
    b: Vec<f64>,
    sigma: Vec<f64>,
    inc: Vec<f64>,
}

impl<'a> WeightIntegrand<'a> {
    pub(crate) fn new(model: &'a SdeModel, gamma: &'a PerturbationField) -> Result<Self> {
        let d = model.dim();
        if gamma.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: gamma.dim(),
            });
        }
        Ok(Self {
            model,
            gamma,
            g: vec![0.0; d],
            b: vec![0.0; d],
            sigma: vec![0.0; d * d],
            inc: vec![0.0; d],
        })
    }

    /// Weight increments for the step `state -> next` at time `t`.
    pub(crate) fn increment(
        &mut self,
        t: f64,
        dt: f64,
        state: &[f64],
        next: &[f64],
        dw: &[f64],
        reflected: bool,
    ) -> Result<(f64, f64)> {
        if self.gamma.is_zero() {
            return Ok((0.0, 0.0));
        }
        let d = self.g.len();
        self.gamma.eval(t, state, &mut self.g);
        self.model.diffusion(t, state, &mut self.sigma);
        if reflected {
            for i in 0..d {
                let row = &self.sigma[i * d..(i + 1) * d];
                self.inc[i] = row.iter().zip(dw).map(|(s, w)| s * w).sum();
            }
        } else {
            self.model.drift(t, state, &mut self.b);
            for i in 0..d {
                self.inc[i] = next[i] - state[i] - self.b[i] * dt;
            }
        }
        if d == 1 {
            let s = self.sigma[0];
            if s == 0.0 || !s.is_finite() {
                return Err(Error::IllConditionedDiffusion {
                    time: t,
                    condition: f64::INFINITY,
                });
            }
            let a = self.g[0] / s;
            return Ok((a * self.inc[0] / s, a * a * dt));
        }
        let sigma = DMatrix::from_row_slice(d, d, &self.sigma);
        let sv = sigma.singular_values();
        let (smax, smin) = sv
            .iter()
            .fold((0.0f64, f64::INFINITY), |(hi, lo), v| (hi.max(*v), lo.min(*v)));
        let condition = (smax / smin).powi(2);
        if !(condition <= CONDITION_LIMIT) {
            return Err(Error::IllConditionedDiffusion { time: t, condition });
        }
        let lu = sigma.lu();
        let a = lu
            .solve(&DVector::from_column_slice(&self.g))
            .ok_or(Error::IllConditionedDiffusion { time: t, condition })?;
        let e = lu
            .solve(&DVector::from_column_slice(&self.inc))
            .ok_or(Error::IllConditionedDiffusion { time: t, condition })?;
        Ok((a.dot(&e), a.norm_squared() * dt))
    }

    pub(crate) fn step(&mut self, step: &Step<'_>) -> Result<(f64, f64)> {
        self.increment(step.time, step.dt, step.state, step.next, step.dw, step.reflected)
    }
}

pub(crate) fn exp_weight(m: f64, qv: f64) -> Result<f64> {
    let e = m - 0.5 * qv;
    if e > EXP_LIMIT || !e.is_finite() {
        return Err(Error::ExpOverflow { m, qv });
    }
    Ok(e.exp())
}

/// `(M, <M>)` at grid index `k` along `path`.
pub(crate) fn weights_at(
    path: &PathView<'_>,
    gamma: &PerturbationField,
    model: &SdeModel,
    k: usize,
) -> Result<(f64, f64)> {
    if gamma.is_zero() {
        return Ok((0.0, 0.0));
    }
    let mut integrand = WeightIntegrand::new(model, gamma)?;
    let dt = path.grid.dt();
    let (mut m, mut qv) = (0.0, 0.0);
    for j in 0..k {
        let (dm, dq) = integrand.increment(
            path.grid.time(j),
            dt,
            path.state(j),
            path.state(j + 1),
            path.increment(j),
            path.is_reflected(j),
        )?;
        m += dm;
        qv += dq;
    }
    Ok((m, qv))
}

/// Full `M`, `<M>`, `Z` series along a base path.
pub fn girsanov_series(path: &PathView<'_>, gamma: &PerturbationField, model: &SdeModel) -> Result<GirsanovSeries> {
    let n = path.n_steps();
    let mut out = GirsanovSeries {
        m: Vec::with_capacity(n + 1),
        qv: Vec::with_capacity(n + 1),
        z: Vec::with_capacity(n + 1),
    };
    out.m.push(0.0);
    out.qv.push(0.0);
    out.z.push(1.0);
    let mut integrand = WeightIntegrand::new(model, gamma)?;
    let dt = path.grid.dt();
    let (mut m, mut qv) = (0.0, 0.0);
    for j in 0..n {
        let (dm, dq) = integrand.increment(
            path.grid.time(j),
            dt,
            path.state(j),
            path.state(j + 1),
            path.increment(j),
            path.is_reflected(j),
        )?;
        m += dm;
        qv += dq;
        out.m.push(m);
        out.qv.push(qv);
        out.z.push(exp_weight(m, qv)?);
    }
    Ok(out)
}

/// Ito weight `M_{t_k}` for every grid index.
pub fn ito_weight(path: &PathView<'_>, gamma: &PerturbationField, model: &SdeModel) -> Result<Vec<f64>> {
    let mut integrand = WeightIntegrand::new(model, gamma)?;
    let dt = path.grid.dt();
    let mut m = vec![0.0; path.n_steps() + 1];
    for j in 0..path.n_steps() {
        let (dm, _) = integrand.increment(
            path.grid.time(j),
            dt,
            path.state(j),
            path.state(j + 1),
            path.increment(j),
            path.is_reflected(j),
        )?;
        m[j + 1] = m[j] + dm;
    }
    Ok(m)
}

/// Quadratic variation `<M>_{t_k}`; nondecreasing by construction.
pub fn quadratic_variation(path: &PathView<'_>, gamma: &PerturbationField, model: &SdeModel) -> Result<Vec<f64>> {
    Ok(girsanov_series(path, gamma, model)?.qv)
}

/// `Z_{t_k} = exp(M_{t_k} - <M>_{t_k} / 2)`.
pub fn exponential_martingale(path: &PathView<'_>, gamma: &PerturbationField, model: &SdeModel) -> Result<Vec<f64>> {
    Ok(girsanov_series(path, gamma, model)?.z)
}

pub(crate) fn check_base(ensemble: &PathEnsemble, model: &SdeModel) -> Result<()> {
    if !ensemble.is_base() {
        return Err(Error::InvalidInput(format!(
            "ensemble was simulated with perturbation `{}`; a base (gamma = 0) ensemble is required",
            ensemble.gamma_id
        )));
    }
    if ensemble.model_id != model.id() {
        return Err(Error::InvalidInput(format!(
            "ensemble was simulated with model `{}`, not `{}`",
            ensemble.model_id,
            model.id()
        )));
    }
    Ok(())
}

/// Evaluates `f` on every path in parallel, returning samples in path order.
pub(crate) fn per_path<F>(ensemble: &PathEnsemble, f: F) -> Result<Vec<f64>>
where
    F: Fn(PathView<'_>) -> Result<f64> + Sync,
{
    let results: Vec<Result<f64>> = (0..ensemble.n_paths())
        .into_par_iter()
        .map(|i| f(ensemble.path(i)).map_err(|e| e.with_path(i)))
        .collect();
    results.into_iter().collect()
}

/// `E^gamma[g] = E^0[g Z]` from a base ensemble. For time-t observables the
/// density is taken at the observation time.
pub fn reweighted_expectation(
    base: &PathEnsemble,
    gamma: &PerturbationField,
    model: &SdeModel,
    observable: &Observable,
) -> Result<MCEstimate> {
    check_base(base, model)?;
    let k = observable.weight_index(&base.grid)?;
    let samples = per_path(base, |p| {
        let g = observable.evaluate(&p)?;
        let (m, qv) = weights_at(&p, gamma, model, k)?;
        Ok(g * exp_weight(m, qv)?)
    })?;
    MCEstimate::from_samples(&samples)
}
