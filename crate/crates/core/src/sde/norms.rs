//! Grid-sampled coefficient diagnostics: V-norm estimates of perturbation
//! fields and runtime checks of the Lipschitz, growth and ellipticity bounds.
//!
//! All quantities are maxima over a tensor grid (axis-adjacent difference
//! quotients for Lipschitz constants), so they bound the true constants from
//! below and converge as the resolution grows.

use nalgebra::DMatrix;
use serde::Serialize;

use super::domain::Domain;
use super::model::{PerturbationField, SdeModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Sampling {
    /// Points per axis, endpoints included.
    pub resolution: usize,
    /// Number of time slices in [0, horizon].
    pub time_samples: usize,
    pub horizon: f64,
}

struct TensorGrid {
    dim: usize,
    resolution: usize,
    lower: Vec<f64>,
    spacing: Vec<f64>,
}

impl TensorGrid {
    fn new(domain: &Domain, resolution: usize) -> Result<Self> {
        let (lower, upper) = domain.bounds().ok_or_else(|| {
            Error::UnsupportedDomain("grid sampling needs a box domain".into())
        })?;
        if resolution < 2 {
            return Err(Error::InvalidInput(format!("resolution must be >= 2, got {resolution}")));
        }
        let spacing = lower
            .iter()
            .zip(upper)
            .map(|(lo, up)| (up - lo) / (resolution - 1) as f64)
            .collect();
        Ok(Self {
            dim: lower.len(),
            resolution,
            lower: lower.to_vec(),
            spacing,
        })
    }

    fn len(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }

    fn point(&self, mut flat: usize, out: &mut [f64]) {
        for axis in (0..self.dim).rev() {
            let j = flat % self.resolution;
            flat /= self.resolution;
            out[axis] = self.lower[axis] + j as f64 * self.spacing[axis];
        }
    }

    fn stride(&self, axis: usize) -> usize {
        self.resolution.pow((self.dim - 1 - axis) as u32)
    }

    /// Index of the neighbour one step up along `axis`, if it exists.
    fn up_neighbour(&self, flat: usize, axis: usize) -> Option<usize> {
        let s = self.stride(axis);
        ((flat / s) % self.resolution + 1 < self.resolution).then_some(flat + s)
    }
}

fn time_slices(s: &Sampling) -> Vec<f64> {
    if s.time_samples <= 1 {
        vec![0.0]
    } else {
        (0..s.time_samples)
            .map(|m| s.horizon * m as f64 / (s.time_samples - 1) as f64)
            .collect()
    }
}

/// Evaluates `f` on the grid and returns (sup |f_i|, max difference quotient).
fn sup_and_lipschitz<F>(grid: &TensorGrid, width: usize, times: &[f64], f: F) -> (f64, f64)
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = grid.len();
    let mut values = vec![0.0; n * width];
    let mut y = vec![0.0; grid.dim];
    let (mut sup, mut lip) = (0.0f64, 0.0f64);
    for &t in times {
        for p in 0..n {
            grid.point(p, &mut y);
            f(t, &y, &mut values[p * width..(p + 1) * width]);
        }
        sup = values.iter().fold(sup, |m, v| m.max(v.abs()));
        for p in 0..n {
            for axis in 0..grid.dim {
                if let Some(q) = grid.up_neighbour(p, axis) {
                    let h = grid.spacing[axis];
                    for c in 0..width {
                        let dq = (values[q * width + c] - values[p * width + c]).abs() / h;
                        lip = lip.max(dq);
                    }
                }
            }
        }
    }
    (sup, lip)
}

/// Grid estimate of `max(sup_i |f_i|, Lip(f))` over the box and time slices.
pub fn estimate_v_norm(field: &PerturbationField, domain: &Domain, sampling: Sampling) -> Result<f64> {
    if field.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            found: field.dim(),
        });
    }
    let grid = TensorGrid::new(domain, sampling.resolution)?;
    let (sup, lip) = sup_and_lipschitz(&grid, field.dim(), &time_slices(&sampling), |t, y, out| {
        field.eval(t, y, out)
    });
    Ok(sup.max(lip))
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub declared_lipschitz: f64,
    pub declared_ellipticity: f64,
    pub drift_lipschitz: f64,
    pub diffusion_lipschitz: f64,
    /// max |b_i(t,y)| / (1 + |y|)
    pub drift_growth: f64,
    /// max |sigma_ij(t,y)| / (1 + |y|)
    pub diffusion_growth: f64,
    pub min_singular_value: f64,
    pub violations: Vec<String>,
}

impl AssumptionReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples the coefficient bounds of `model` on the box and reports every
/// quantity together with the violated declarations.
pub fn validate_model(model: &SdeModel, domain: &Domain, resolution: usize) -> Result<AssumptionReport> {
    let d = model.dim();
    if domain.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: domain.dim(),
        });
    }
    let grid = TensorGrid::new(domain, resolution)?;
    let sampling = Sampling {
        resolution,
        time_samples: 3,
        horizon: model.horizon(),
    };
    let times = time_slices(&sampling);
    let (_, drift_lip) = sup_and_lipschitz(&grid, d, &times, |t, y, o| model.drift(t, y, o));
    let (_, diff_lip) = sup_and_lipschitz(&grid, d * d, &times, |t, y, o| model.diffusion(t, y, o));

    let mut y = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d];
    let (mut drift_growth, mut diffusion_growth) = (0.0f64, 0.0f64);
    let mut min_sv = f64::INFINITY;
    for &t in &times {
        for p in 0..grid.len() {
            grid.point(p, &mut y);
            let scale = 1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt();
            model.drift(t, &y, &mut b);
            model.diffusion(t, &y, &mut s);
            drift_growth = b.iter().fold(drift_growth, |m, v| m.max(v.abs() / scale));
            diffusion_growth = s.iter().fold(diffusion_growth, |m, v| m.max(v.abs() / scale));
            min_sv = min_sv.min(smallest_singular_value(&s, d));
        }
    }

    let l = model.lipschitz_bound();
    let lambda = model.ellipticity_bound();
    let mut violations = Vec::new();
    for (name, value) in [
        ("drift Lipschitz quotient", drift_lip),
        ("diffusion Lipschitz quotient", diff_lip),
        ("drift growth ratio", drift_growth),
        ("diffusion growth ratio", diffusion_growth),
    ] {
        if value > l * (1.0 + 1e-9) {
            violations.push(format!("{name} {value:.6} exceeds L = {l}"));
        }
    }
    if min_sv < (1.0 / lambda) * (1.0 - 1e-9) {
        violations.push(format!(
            "smallest singular value of sigma {min_sv:.6} is below 1/lambda_sigma = {}",
            1.0 / lambda
        ));
    }
    Ok(AssumptionReport {
        declared_lipschitz: l,
        declared_ellipticity: lambda,
        drift_lipschitz: drift_lip,
        diffusion_lipschitz: diff_lip,
        drift_growth,
        diffusion_growth,
        min_singular_value: min_sv,
        violations,
    })
}

pub(crate) fn smallest_singular_value(row_major: &[f64], d: usize) -> f64 {
    if d == 1 {
        return row_major[0].abs();
    }
    DMatrix::from_row_slice(d, d, row_major)
        .singular_values()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(*v))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    fn sampling(resolution: usize) -> Sampling {
        Sampling {
            resolution,
            time_samples: 1,
            horizon: 1.0,
        }
    }

    #[test]
    fn v_norm_examples() {
        let d = Domain::interval(0.0, std::f64::consts::PI).unwrap();
        assert_eq!(estimate_v_norm(&PerturbationField::zero(1), &d, sampling(10)).unwrap(), 0.0);
        let c = PerturbationField::constant(vec![-0.7]);
        assert!((estimate_v_norm(&c, &d, sampling(10)).unwrap() - 0.7).abs() < 1e-15);
        let sin = PerturbationField::new("sin", 1, Arc::new(|_, y, o| o[0] = y[0].sin()), 1.0).unwrap();
        let v = estimate_v_norm(&sin, &d, sampling(10_000)).unwrap();
        assert!((v - 1.0).abs() < 1e-3, "{v}");
        assert!(v <= 1.0 + 1e-12);
    }

    #[test]
    fn v_norm_rejects_unbounded() {
        let err = estimate_v_norm(&PerturbationField::zero(1), &Domain::unbounded(1), sampling(10));
        assert!(matches!(err, Err(Error::UnsupportedDomain(_))));
    }

    #[test]
    fn bump_v_norm_matches_sampled() {
        let g = PerturbationField::gaussian_bump(vec![0.0], 0.3, vec![1.5]).unwrap();
        let d = Domain::interval(-2.0, 2.0).unwrap();
        let v = estimate_v_norm(&g, &d, sampling(20_001)).unwrap();
        assert!((v - g.v_norm()).abs() < 1e-3 * g.v_norm());
    }

    #[test]
    fn validation_examples() {
        let d = Domain::interval(-2.0, 2.0).unwrap();
        let bm = SdeModel::brownian(1, 1.0, 1.0).unwrap();
        let r = validate_model(&bm, &d, 101).unwrap();
        assert_eq!(r.min_singular_value, 1.0);
        assert_eq!(r.drift_growth, 0.0);

        let ou = SdeModel::ornstein_uhlenbeck(1.0, 0.0, 1.0, 1.0).unwrap();
        let r = validate_model(&ou, &d, 401).unwrap();
        assert!((r.drift_lipschitz - 1.0).abs() < 1e-9);
        assert!(r.is_valid(), "{:?}", r.violations);

        let weak = SdeModel::new(
            "weak-noise",
            1,
            1.0,
            Arc::new(|_, _, o| o[0] = 0.0),
            Arc::new(|_, _, o| o[0] = 0.5),
            1.0,
            1.0,
        )
        .unwrap();
        let r = validate_model(&weak, &d, 11).unwrap();
        assert!(r.violations.iter().any(|v| v.contains("singular value")));
    }

    #[test]
    fn two_dimensional_singular_values() {
        let d = Domain::new_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let m = SdeModel::new(
            "aniso",
            2,
            1.0,
            Arc::new(|_, _, o| o.fill(0.0)),
            Arc::new(|_, _, o| o.copy_from_slice(&[2.0, 0.0, 0.0, 0.25])),
            5.0,
            4.0,
        )
        .unwrap();
        let r = validate_model(&m, &d, 5).unwrap();
        assert!((r.min_singular_value - 0.25).abs() < 1e-12);
        assert!(r.is_valid());
    }
}
