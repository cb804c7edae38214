use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Time-dependent vector field `(t, y, out)`, writing `d` components into `out`.
pub type VectorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Time-dependent `d x d` matrix field, written row-major into `out`.
pub type MatrixField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// `dX = b(t, X) dt + sigma(t, X) dW` on [0, horizon], together with the
/// declared coefficient bounds `L` (Lipschitz / growth) and `lambda_sigma`
/// (uniform ellipticity).
#[derive(Clone)]
pub struct SdeModel {
    id: String,
    dim: usize,
    horizon: f64,
    drift: VectorField,
    diffusion: MatrixField,
    lipschitz_bound: f64,
    ellipticity_bound: f64,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .field("ellipticity_bound", &self.ellipticity_bound)
            .finish()
    }
}

impl SdeModel {
    pub fn new(
        id: impl Into<String>,
        dim: usize,
        horizon: f64,
        drift: VectorField,
        diffusion: MatrixField,
        lipschitz_bound: f64,
        ellipticity_bound: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be >= 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
        }
        if !(lipschitz_bound > 0.0 && ellipticity_bound > 0.0) {
            return Err(Error::InvalidInput(
                "coefficient bounds L and lambda_sigma must be positive".into(),
            ));
        }
        Ok(Self {
            id: id.into(),
            dim,
            horizon,
            drift,
            diffusion,
            lipschitz_bound,
            ellipticity_bound,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    pub fn ellipticity_bound(&self) -> f64 {
        self.ellipticity_bound
    }

    pub fn drift(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.drift)(t, y, out)
    }

    pub fn diffusion(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, y, out)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    /// Same model with drift `b + shift`. Used to move the base point of a
    /// derivative evaluation.
    pub fn with_drift_shift(&self, shift: &PerturbationField) -> Result<Self> {
        if shift.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: shift.dim(),
            });
        }
        let base = self.drift.clone();
        let extra = shift.field.clone();
        let d = self.dim;
        let drift: VectorField = Arc::new(move |t, y, out| {
            base(t, y, out);
            let mut tmp = [0.0; 8];
            if d <= 8 {
                extra(t, y, &mut tmp[..d]);
                for (o, e) in out.iter_mut().zip(&tmp[..d]) {
                    *o += e;
                }
            } else {
                let mut v = vec![0.0; d];
                extra(t, y, &mut v);
                for (o, e) in out.iter_mut().zip(&v) {
                    *o += e;
                }
            }
        });
        Ok(Self {
            id: format!("{}+{}", self.id, shift.id()),
            drift,
            lipschitz_bound: self.lipschitz_bound + shift.v_norm(),
            ..self.clone()
        })
    }

    /// Brownian motion with constant drift `drift` and scalar noise `sigma`
    /// in one dimension.
    pub fn constant_drift(drift: f64, sigma: f64, horizon: f64) -> Result<Self> {
        Self::new(
            format!("constant_drift(b={drift},sigma={sigma})"),
            1,
            horizon,
            Arc::new(move |_, _, out| out[0] = drift),
            Arc::new(move |_, _, out| out[0] = sigma),
            drift.abs().max(sigma.abs()).max(1e-12),
            1.0 / sigma.abs(),
        )
    }

    /// `dim`-dimensional Brownian motion with isotropic noise `sigma`.
    pub fn brownian(dim: usize, sigma: f64, horizon: f64) -> Result<Self> {
        Self::new(
            format!("brownian(d={dim},sigma={sigma})"),
            dim,
            horizon,
            Arc::new(|_, _, out| out.fill(0.0)),
            Arc::new(move |_, _, out| {
                out.fill(0.0);
                for i in 0..dim {
                    out[i * dim + i] = sigma;
                }
            }),
            sigma.abs(),
            1.0 / sigma.abs(),
        )
    }

    /// `dX = -theta (X - mean) dt + sigma dW`.
    pub fn ornstein_uhlenbeck(theta: f64, mean: f64, sigma: f64, horizon: f64) -> Result<Self> {
        Self::new(
            format!("ornstein_uhlenbeck(theta={theta},mu={mean},sigma={sigma})"),
            1,
            horizon,
            Arc::new(move |_, y, out| out[0] = -theta * (y[0] - mean)),
            Arc::new(move |_, _, out| out[0] = sigma),
            theta.abs().max(theta.abs() * mean.abs()).max(sigma.abs()),
            1.0 / sigma.abs(),
        )
    }

    /// Gradient flow in the double-well potential `(x^2 - 1)^2`:
    /// `b(x) = -4 x (x^2 - 1)`. The declared `L` is the Lipschitz constant on [-2, 2].
    pub fn double_well(sigma: f64, horizon: f64) -> Result<Self> {
        Self::new(
            format!("double_well(sigma={sigma})"),
            1,
            horizon,
            Arc::new(|_, y, out| {
                let x = y[0];
                out[0] = -4.0 * x * (x * x - 1.0);
            }),
            Arc::new(move |_, _, out| out[0] = sigma),
            44.0,
            1.0 / sigma.abs(),
        )
    }

    /// Time-periodic tilt `b(t, x) = amplitude * sin(2 pi t / period)`.
    pub fn periodic_tilt(amplitude: f64, period: f64, sigma: f64, horizon: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::InvalidInput(format!("period must be positive, got {period}")));
        }
        Self::new(
            format!("periodic_tilt(a={amplitude},tau={period},sigma={sigma})"),
            1,
            horizon,
            Arc::new(move |t, _, out| out[0] = amplitude * (2.0 * PI * t / period).sin()),
            Arc::new(move |_, _, out| out[0] = sigma),
            amplitude.abs().max(sigma.abs()).max(1e-12),
            1.0 / sigma.abs(),
        )
    }
}

/// A drift direction `gamma` together with its (estimated) V-norm.
#[derive(Clone)]
pub struct PerturbationField {
    id: String,
    dim: usize,
    field: VectorField,
    v_norm: f64,
    zero: bool,
}

impl fmt::Debug for PerturbationField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbationField")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("v_norm", &self.v_norm)
            .finish()
    }
}

pub const ZERO_FIELD_ID: &str = "zero";

impl PerturbationField {
    pub fn new(id: impl Into<String>, dim: usize, field: VectorField, v_norm: f64) -> Result<Self> {
        if !(v_norm.is_finite() && v_norm >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "V-norm estimate must be finite and nonnegative, got {v_norm}"
            )));
        }
        Ok(Self {
            id: id.into(),
            dim,
            field,
            v_norm,
            zero: false,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            id: ZERO_FIELD_ID.into(),
            dim,
            field: Arc::new(|_, _, out| out.fill(0.0)),
            v_norm: 0.0,
            zero: true,
        }
    }

    pub fn constant(values: Vec<f64>) -> Self {
        let v_norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dim = values.len();
        if v_norm == 0.0 {
            return Self::zero(dim);
        }
        Self {
            id: format!("const{values:?}"),
            dim,
            field: Arc::new(move |_, _, out| out.copy_from_slice(&values)),
            v_norm,
            zero: false,
        }
    }

    /// `amplitude * exp(-|y - center|^2 / (2 width^2))`, the same profile in
    /// every component scaled by `amplitude[i]`.
    pub fn gaussian_bump(center: Vec<f64>, width: f64, amplitude: Vec<f64>) -> Result<Self> {
        if center.len() != amplitude.len() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                found: amplitude.len(),
            });
        }
        if !(width > 0.0) {
            return Err(Error::InvalidInput(format!("bump width must be positive, got {width}")));
        }
        let a_max = amplitude.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // sup |f_i| = |a_i|; max |grad f_i| = |a_i| e^{-1/2} / width
        let v_norm = a_max.max(a_max * (-0.5f64).exp() / width);
        let dim = center.len();
        Self::new(
            format!("bump(c={center:?},w={width},a={amplitude:?})"),
            dim,
            Arc::new(move |_, y, out| {
                let r2: f64 = y.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
                let s = (-r2 / (2.0 * width * width)).exp();
                for (o, a) in out.iter_mut().zip(&amplitude) {
                    *o = a * s;
                }
            }),
            v_norm,
        )
    }

    /// `gamma(y) = slope * y` on a domain with `sup |y| = radius`.
    pub fn linear(slope: f64, dim: usize, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidInput(format!("radius must be nonnegative, got {radius}")));
        }
        if slope == 0.0 {
            return Ok(Self::zero(dim));
        }
        Self::new(
            format!("linear(slope={slope})"),
            dim,
            Arc::new(move |_, y, out| {
                for (o, v) in out.iter_mut().zip(y) {
                    *o = slope * v;
                }
            }),
            slope.abs() * radius.max(1.0),
        )
    }

    /// One-dimensional `gamma(s, y) = slope * s` on [0, horizon].
    pub fn time_ramp(slope: f64, horizon: f64) -> Self {
        Self {
            id: format!("ramp(slope={slope})"),
            dim: 1,
            field: Arc::new(move |t, _, out| out[0] = slope * t),
            v_norm: (slope * horizon).abs(),
            zero: slope == 0.0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn v_norm(&self) -> f64 {
        self.v_norm
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.field)(t, y, out)
    }

    /// `a * gamma`. Scaling by zero yields the zero field.
    pub fn scaled(&self, a: f64) -> Self {
        if a == 0.0 || self.zero {
            return Self::zero(self.dim);
        }
        if a == 1.0 {
            return self.clone();
        }
        let inner = self.field.clone();
        Self {
            id: format!("{a}*{}", self.id),
            dim: self.dim,
            field: Arc::new(move |t, y, out| {
                inner(t, y, out);
                for o in out.iter_mut() {
                    *o *= a;
                }
            }),
            v_norm: self.v_norm * a.abs(),
            zero: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_tracks_norm_and_values() {
        let g = PerturbationField::gaussian_bump(vec![0.0], 0.5, vec![2.0]).unwrap();
        let h = g.scaled(-0.25);
        let (mut a, mut b) = ([0.0], [0.0]);
        g.eval(0.0, &[0.3], &mut a);
        h.eval(0.0, &[0.3], &mut b);
        assert!((b[0] + 0.25 * a[0]).abs() < 1e-15);
        assert!((h.v_norm() - 0.25 * g.v_norm()).abs() < 1e-15);
        assert!(g.scaled(0.0).is_zero());
    }

    #[test]
    fn drift_shift_adds() {
        let m = SdeModel::double_well(0.7, 1.0).unwrap();
        let s = m.with_drift_shift(&PerturbationField::constant(vec![0.5])).unwrap();
        let (mut a, mut b) = ([0.0], [0.0]);
        m.drift(0.0, &[0.3], &mut a);
        s.drift(0.0, &[0.3], &mut b);
        assert!((b[0] - a[0] - 0.5).abs() < 1e-15);
    }
}
