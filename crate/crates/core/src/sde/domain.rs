use crate::error::{Error, Result};

/// State space of a simulation: all of R^d, or an axis-aligned box with
/// normally reflecting faces.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Unbounded { dim: usize },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl Domain {
    pub fn unbounded(dim: usize) -> Self {
        Domain::Unbounded { dim }
    }

    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidInput(format!(
                "box bounds must be non-empty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (axis, (lo, up)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && up.is_finite() && lo < up) {
                return Err(Error::InvalidInput(format!(
                    "box axis {axis}: need finite lower < upper, got [{lo}, {up}]"
                )));
            }
        }
        Ok(Domain::Box { lower, upper })
    }

    /// Unit interval [lo, hi] in one dimension.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new_box(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Unbounded { dim } => *dim,
            Domain::Box { lower, .. } => lower.len(),
        }
    }

    pub fn is_box(&self) -> bool {
        matches!(self, Domain::Box { .. })
    }

    pub fn bounds(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Domain::Box { lower, upper } => Some((lower, upper)),
            Domain::Unbounded { .. } => None,
        }
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        match self {
            Domain::Unbounded { .. } => point.iter().all(|v| v.is_finite()),
            Domain::Box { lower, upper } => point
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (lo, up))| *lo <= *x && *x <= *up),
        }
    }

    /// Mirror-fold `point` into the box in place. Returns true if any
    /// coordinate was moved.
    pub fn reflect_in_place(&self, point: &mut [f64]) -> bool {
        let Domain::Box { lower, upper } = self else {
            return false;
        };
        let mut moved = false;
        for ((x, lo), up) in point.iter_mut().zip(lower).zip(upper) {
            if *lo <= *x && *x <= *up {
                continue;
            }
            moved = true;
            let width = up - lo;
            // Repeated folding across both faces is a triangle wave of period 2w.
            let mut m = (*x - lo).rem_euclid(2.0 * width);
            if m > width {
                m = 2.0 * width - m;
            }
            *x = (lo + m).clamp(*lo, *up);
        }
        moved
    }
}

/// Fold a point back into the domain. Identity on unbounded domains and on
/// interior points.
pub fn reflect_into_domain(point: &[f64], domain: &Domain) -> Vec<f64> {
    let mut out = point.to_vec();
    domain.reflect_in_place(&mut out);
    out
}

/// Uniform time discretization of [0, t_end].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(Error::InvalidInput(format!("t_end must be >= 0, got {t_end}")));
        }
        if n_steps > 0 && t_end == 0.0 {
            return Err(Error::InvalidInput("t_end = 0 with a positive step count".into()));
        }
        Ok(Self { t_end, n_steps })
    }

    /// Grid with step close to `dt` that lands exactly on `t_end`.
    pub fn with_step(t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        Self::new(t_end, ((t_end / dt).round() as usize).max(1))
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        if self.n_steps == 0 {
            0.0
        } else {
            self.t_end / self.n_steps as f64
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            k as f64 * self.dt()
        }
    }

    /// Index of the grid node at time `t`, if `t` is a node.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if self.n_steps == 0 {
            return if t == 0.0 {
                Ok(0)
            } else {
                Err(Error::InvalidInput(format!("time {t} not on the (empty) grid")))
            };
        }
        let k = (t / self.dt()).round();
        if k < 0.0 || k > self.n_steps as f64 || (k * self.dt() - t).abs() > 1e-9 * self.t_end.max(1.0)
        {
            return Err(Error::InvalidInput(format!(
                "time {t} is not a node of the grid (dt = {})",
                self.dt()
            )));
        }
        Ok(k as usize)
    }
}
