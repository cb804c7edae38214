use serde::Serialize;

use crate::error::{Error, Result};
use crate::sde::{Domain, PerturbationField};
use crate::ulam::{assemble_operators, build_grid, estimate_kernel, Grid, KernelParams};

use super::config::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscontinuityRow {
    pub sigma_noise: f64,
    pub bump_width: f64,
    pub distance: f64,
}

/// `f = Lambda(A)^{-1/2} 1_A` on the grid, `A` the cells whose centres lie in
/// the sup-norm ball of diameter `width` around `center`.
pub fn indicator_function(grid: &Grid, center: &[f64], width: f64) -> Result<Vec<f64>> {
    let (lo, hi) = grid.domain().bounds().ok_or(Error::UnsupportedDomain("box domain required".into()))?;
    let cell = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| (b - a) / grid.boxes_per_axis() as f64)
        .fold(0.0f64, f64::max);
    if width < cell * (1.0 - 1e-9) {
        return Err(Error::Resolution(format!(
            "bump width {width} is narrower than one cell ({cell})"
        )));
    }
    let inside: Vec<bool> = grid
        .centers()
        .iter()
        .map(|c| c.iter().zip(center).all(|(x, m)| (x - m).abs() < 0.5 * width))
        .collect();
    let count = inside.iter().filter(|b| **b).count();
    if count == 0 {
        return Err(Error::Resolution(format!("no cell centre within {width}/2 of {center:?}")));
    }
    let value = 1.0 / (count as f64 * grid.box_volume()).sqrt();
    Ok(inside.iter().map(|b| if *b { value } else { 0.0 }).collect())
}

/// `||U(offset) f - U(0) f||_{L^2}` for each noise level and set width, both
/// Koopman matrices estimated with common seeds.
#[allow(clippy::too_many_arguments)]
pub fn discontinuity_demo(
    model: &ModelSpec,
    domain: &Domain,
    boxes_per_axis: usize,
    params: &KernelParams,
    sigmas: &[f64],
    widths: &[f64],
    offset: f64,
    center: &[f64],
) -> Result<Vec<DiscontinuityRow>> {
    let decreasing = |v: &[f64]| v.iter().all(|x| *x > 0.0) && v.windows(2).all(|w| w[1] < w[0]);
    if !decreasing(sigmas) || !decreasing(widths) {
        return Err(Error::InvalidInput("noise levels and widths must be positive and decreasing".into()));
    }
    let grid = build_grid(domain, boxes_per_axis)?;
    let indicators = widths
        .iter()
        .map(|w| indicator_function(&grid, center, *w))
        .collect::<Result<Vec<_>>>()?;
    let dim = grid.dim();
    let shift = PerturbationField::constant(vec![offset; dim]);
    let zero = PerturbationField::zero(dim);
    let mut rows = Vec::new();
    for &sigma in sigmas {
        let m = model.with_sigma(sigma).build()?;
        let (_, u0) = assemble_operators(&estimate_kernel(&m, &zero, &grid, params)?, &grid)?;
        let (_, ug) = assemble_operators(&estimate_kernel(&m, &shift, &grid, params)?, &grid)?;
        for (f, &width) in indicators.iter().zip(widths) {
            let diff: Vec<f64> = ug.apply(f).iter().zip(u0.apply(f)).map(|(a, b)| a - b).collect();
            rows.push(DiscontinuityRow {
                sigma_noise: sigma,
                bump_width: width,
                distance: grid.l2_norm(&diff),
            });
        }
    }
    Ok(rows)
}
