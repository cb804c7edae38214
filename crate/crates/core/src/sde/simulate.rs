//! Euler–Maruyama integration with mirror reflection, and seed-reproducible
//! path ensembles.
//!
//! Every path draws its Wiener increments from its own ChaCha8 stream, keyed
//! by `(master seed, path index)`. The sample set is therefore a function of
//! the seed alone, independent of how rayon schedules the paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::domain::{Domain, TimeGrid};
use super::model::{PerturbationField, SdeModel};
use crate::error::{Error, Result};

/// Paths are aborted once |X| exceeds this.
pub const EXPLOSION_THRESHOLD: f64 = 1e6;

/// Counter-based stream for path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One Euler–Maruyama step as seen by step observers.
pub struct Step<'a> {
    pub index: usize,
    pub time: f64,
    pub dt: f64,
    pub state: &'a [f64],
    pub dw: &'a [f64],
    pub next: &'a [f64],
    pub reflected: bool,
}

/// Core integrator. `noise` fills the `d` Wiener increments of each step;
/// `on_step` sees every step after it is taken. Returns the final state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate<N, F>(
    model: &SdeModel,
    domain: &Domain,
    x0: &[f64],
    gamma: &PerturbationField,
    t0: f64,
    grid: &TimeGrid,
    mut noise: N,
    mut on_step: F,
) -> Result<Vec<f64>>
where
    N: FnMut(&mut [f64]),
    F: FnMut(&Step<'_>) -> Result<()>,
{
    let d = model.dim();
    check_inputs(model, domain, x0, gamma, t0, grid)?;
    let dt = grid.dt();
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut drift = vec![0.0; d];
    let mut pert = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut dw = vec![0.0; d];
    let skip_gamma = gamma.is_zero();

    for k in 0..grid.n_steps() {
        let t = t0 + grid.time(k);
        model.drift(t, &x, &mut drift);
        if !skip_gamma {
            gamma.eval(t, &x, &mut pert);
            for (b, g) in drift.iter_mut().zip(&pert) {
                *b += g;
            }
        }
        model.diffusion(t, &x, &mut sigma);
        noise(&mut dw);
        for i in 0..d {
            let row = &sigma[i * d..(i + 1) * d];
            let diff: f64 = row.iter().zip(&dw).map(|(s, w)| s * w).sum();
            next[i] = x[i] + drift[i] * dt + diff;
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > EXPLOSION_THRESHOLD {
            return Err(Error::Explosion {
                path: None,
                step: k,
                time: t,
                norm,
            });
        }
        let reflected = domain.reflect_in_place(&mut next);
        on_step(&Step {
            index: k,
            time: t,
            dt,
            state: &x,
            dw: &dw,
            next: &next,
            reflected,
        })?;
        std::mem::swap(&mut x, &mut next);
    }
    Ok(x)
}

fn check_inputs(
    model: &SdeModel,
    domain: &Domain,
    x0: &[f64],
    gamma: &PerturbationField,
    t0: f64,
    grid: &TimeGrid,
) -> Result<()> {
    let d = model.dim();
    for found in [x0.len(), domain.dim(), gamma.dim()] {
        if found != d {
            return Err(Error::DimensionMismatch { expected: d, found });
        }
    }
    if t0 + grid.t_end() > model.horizon() * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "simulation end {} exceeds model horizon {}",
            t0 + grid.t_end(),
            model.horizon()
        )));
    }
    if !domain.contains(x0) {
        return Err(Error::OutsideDomain { point: x0.to_vec() });
    }
    Ok(())
}

/// A single simulated path with the Wiener increments that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub dim: usize,
    pub grid: TimeGrid,
    /// `(n_steps + 1) * dim`, time-major.
    pub states: Vec<f64>,
    /// `n_steps * dim` Wiener increments.
    pub increments: Vec<f64>,
    pub reflected: Vec<bool>,
}

impl SamplePath {
    pub fn view(&self) -> PathView<'_> {
        PathView {
            dim: self.dim,
            grid: &self.grid,
            states: &self.states,
            increments: &self.increments,
            reflected: &self.reflected,
        }
    }
}

/// Borrowed view of one path, either standalone or inside an ensemble.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub dim: usize,
    pub grid: &'a TimeGrid,
    pub states: &'a [f64],
    pub increments: &'a [f64],
    pub reflected: &'a [bool],
}

impl<'a> PathView<'a> {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn state(&self, k: usize) -> &'a [f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn terminal(&self) -> &'a [f64] {
        self.state(self.n_steps())
    }

    pub fn increment(&self, k: usize) -> &'a [f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn is_reflected(&self, k: usize) -> bool {
        self.reflected[k]
    }
}

/// Simulate one path of `dX = (b + gamma) dt + sigma dW` with reflection,
/// drawing increments from the stream `(seed, stream)`.
pub fn simulate_path(
    model: &SdeModel,
    domain: &Domain,
    x0: &[f64],
    gamma: &PerturbationField,
    grid: &TimeGrid,
    seed: u64,
    stream: u64,
) -> Result<SamplePath> {
    let mut rng = path_rng(seed, stream);
    let sqrt_dt = grid.dt().sqrt();
    let d = model.dim();
    let mut out = SamplePath {
        dim: d,
        grid: *grid,
        states: Vec::with_capacity((grid.n_steps() + 1) * d),
        increments: Vec::with_capacity(grid.n_steps() * d),
        reflected: Vec::with_capacity(grid.n_steps()),
    };
    out.states.extend_from_slice(x0);
    let (states, increments, reflected) = (&mut out.states, &mut out.increments, &mut out.reflected);
    integrate(
        model,
        domain,
        x0,
        gamma,
        0.0,
        grid,
        |dw| {
            for w in dw.iter_mut() {
                *w = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
            }
        },
        |step| {
            states.extend_from_slice(step.next);
            increments.extend_from_slice(step.dw);
            reflected.push(step.reflected);
            Ok(())
        },
    )?;
    Ok(out)
}

/// Integrate with caller-supplied Wiener increments (`n_steps * dim` values).
pub fn simulate_path_with_increments(
    model: &SdeModel,
    domain: &Domain,
    x0: &[f64],
    gamma: &PerturbationField,
    grid: &TimeGrid,
    increments: &[f64],
) -> Result<SamplePath> {
    let d = model.dim();
    if increments.len() != grid.n_steps() * d {
        return Err(Error::DimensionMismatch {
            expected: grid.n_steps() * d,
            found: increments.len(),
        });
    }
    let mut out = SamplePath {
        dim: d,
        grid: *grid,
        states: x0.to_vec(),
        increments: increments.to_vec(),
        reflected: Vec::with_capacity(grid.n_steps()),
    };
    let mut chunks = increments.chunks_exact(d);
    let (states, reflected) = (&mut out.states, &mut out.reflected);
    integrate(
        model,
        domain,
        x0,
        gamma,
        0.0,
        grid,
        |dw| dw.copy_from_slice(chunks.next().expect("length checked")),
        |step| {
            states.extend_from_slice(step.next);
            reflected.push(step.reflected);
            Ok(())
        },
    )?;
    Ok(out)
}

/// `N` paths on a shared grid, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub dim: usize,
    pub grid: TimeGrid,
    pub x0: Vec<f64>,
    pub seed: u64,
    pub model_id: String,
    pub gamma_id: String,
    n_paths: usize,
    states: Vec<f64>,
    increments: Vec<f64>,
    reflected: Vec<bool>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn path(&self, i: usize) -> PathView<'_> {
        let d = self.dim;
        let n = self.grid.n_steps();
        PathView {
            dim: d,
            grid: &self.grid,
            states: &self.states[i * (n + 1) * d..(i + 1) * (n + 1) * d],
            increments: &self.increments[i * n * d..(i + 1) * n * d],
            reflected: &self.reflected[i * n..(i + 1) * n],
        }
    }

    pub fn paths(&self) -> impl Iterator<Item = PathView<'_>> + '_ {
        (0..self.n_paths).map(move |i| self.path(i))
    }

    /// Whether this ensemble was generated under the unperturbed drift.
    pub fn is_base(&self) -> bool {
        self.gamma_id == super::model::ZERO_FIELD_ID
    }
}

/// Simulate `n_paths` independent paths; path `i` uses stream `(seed, i)`.
pub fn simulate_ensemble(
    model: &SdeModel,
    domain: &Domain,
    x0: &[f64],
    gamma: &PerturbationField,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(Error::InvalidInput("ensemble needs at least one path".into()));
    }
    check_inputs(model, domain, x0, gamma, 0.0, grid)?;
    let d = model.dim();
    let n = grid.n_steps();
    let mut states = vec![0.0; n_paths * (n + 1) * d];
    let mut increments = vec![0.0; n_paths * n * d];
    let mut reflected = vec![false; n_paths * n];
    let state_len = (n + 1) * d;

    // Zero-step grids still need the initial state written.
    let results: Vec<Result<()>> = states
        .par_chunks_mut(state_len)
        .zip(increments.par_chunks_mut((n * d).max(1)))
        .zip(reflected.par_chunks_mut(n.max(1)))
        .enumerate()
        .map(|(i, ((s, inc), refl))| {
            let p = simulate_path(model, domain, x0, gamma, grid, seed, i as u64)
                .map_err(|e| e.with_path(i))?;
            s.copy_from_slice(&p.states);
            inc[..n * d].copy_from_slice(&p.increments);
            refl[..n].copy_from_slice(&p.reflected);
            Ok(())
        })
        .collect();
    if n == 0 {
        // par_chunks over an empty increments buffer yields nothing; fill states directly.
        for chunk in states.chunks_mut(state_len) {
            chunk.copy_from_slice(x0);
        }
    } else {
        results.into_iter().collect::<Result<Vec<()>>>()?;
    }
    Ok(PathEnsemble {
        dim: d,
        grid: *grid,
        x0: x0.to_vec(),
        seed,
        model_id: model.id().to_string(),
        gamma_id: gamma.id().to_string(),
        n_paths,
        states,
        increments,
        reflected,
    })
}
