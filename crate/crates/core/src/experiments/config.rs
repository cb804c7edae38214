//! TOML experiment configuration and the built-in model registry.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{Domain, PerturbationField, SdeModel, TimeGrid};
use crate::sensitivity::Observable;

/// Horizon given to registry models; experiments pick their own time spans.
const MODEL_HORIZON: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DerivativeCheck,
    RemainderScaling,
    OperatorResponse,
    EigenResponse,
    CoherentSets,
    PeriodicForcing,
    ContinuityScan,
    DiscontinuityDemo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::DerivativeCheck,
        ExperimentKind::RemainderScaling,
        ExperimentKind::OperatorResponse,
        ExperimentKind::EigenResponse,
        ExperimentKind::CoherentSets,
        ExperimentKind::PeriodicForcing,
        ExperimentKind::ContinuityScan,
        ExperimentKind::DiscontinuityDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::DerivativeCheck => "derivative_check",
            ExperimentKind::RemainderScaling => "remainder_scaling",
            ExperimentKind::OperatorResponse => "operator_response",
            ExperimentKind::EigenResponse => "eigen_response",
            ExperimentKind::CoherentSets => "coherent_sets",
            ExperimentKind::PeriodicForcing => "periodic_forcing",
            ExperimentKind::ContinuityScan => "continuity_scan",
            ExperimentKind::DiscontinuityDemo => "discontinuity_demo",
        }
    }

    /// Bundled default configuration for this kind.
    pub fn default_config(self) -> &'static str {
        match self {
            ExperimentKind::DerivativeCheck => include_str!("../../configs/derivative_check.toml"),
            ExperimentKind::RemainderScaling => include_str!("../../configs/remainder_scaling.toml"),
            ExperimentKind::OperatorResponse => include_str!("../../configs/operator_response.toml"),
            ExperimentKind::EigenResponse => include_str!("../../configs/eigen_response.toml"),
            ExperimentKind::CoherentSets => include_str!("../../configs/coherent_sets.toml"),
            ExperimentKind::PeriodicForcing => include_str!("../../configs/periodic_forcing.toml"),
            ExperimentKind::ContinuityScan => include_str!("../../configs/continuity_scan.toml"),
            ExperimentKind::DiscontinuityDemo => include_str!("../../configs/discontinuity_demo.toml"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub model: ModelSpec,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    pub time: TimeSpec,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma: Option<GammaSpec>,
    #[serde(default)]
    pub observable: Option<ObservableSpec>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub derivative: Option<DerivativeSpec>,
    #[serde(default)]
    pub eigen: Option<EigenSpec>,
    #[serde(default)]
    pub coherent: Option<CoherentSpec>,
    #[serde(default)]
    pub periodic: Option<PeriodicSpec>,
    #[serde(default)]
    pub continuity: Option<ContinuitySpec>,
    #[serde(default)]
    pub discontinuity: Option<DiscontinuitySpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t_end: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaSpec {
    Zero,
    Constant {
        values: Vec<f64>,
    },
    Bump {
        center: Vec<f64>,
        width: f64,
        amplitude: Vec<f64>,
    },
    /// `slope * y`; the V-norm uses `radius` or the domain's `sup |y|`.
    Linear {
        slope: f64,
        #[serde(default)]
        radius: Option<f64>,
    },
    Ramp {
        slope: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    /// `x_component(X_time)^power`
    Power {
        #[serde(default)]
        time: Option<f64>,
        #[serde(default)]
        component: usize,
        power: i32,
        bound: f64,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default = "default_paths_per_cell")]
    pub n_paths_per_cell: usize,
}

fn default_n_paths() -> usize {
    10_000
}

fn default_paths_per_cell() -> usize {
    1_000
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            n_paths: default_n_paths(),
            n_paths_per_cell: default_paths_per_cell(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub boxes_per_axis: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativeSpec {
    /// Analytic value to compare against.
    #[serde(default)]
    pub expected: Option<f64>,
    /// Step of the common-random-number central difference.
    #[serde(default)]
    pub fd_step: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenSpec {
    /// 1-based index of the tracked eigenvalue.
    #[serde(default = "default_eigen_index")]
    pub index: usize,
    #[serde(default = "default_n_pairs")]
    pub n_pairs: usize,
    /// Epsilon of the finite difference compared with the response formula;
    /// defaults to the smallest epsilon.
    #[serde(default)]
    pub fd_epsilon: Option<f64>,
}

fn default_eigen_index() -> usize {
    2
}

fn default_n_pairs() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherentSpec {
    #[serde(default = "default_n_pairs")]
    pub n_triplets: usize,
    /// Check `|sigma_1 - 1| <= leading_tol`.
    #[serde(default)]
    pub leading_tol: Option<f64>,
    /// Check that the leading singular vectors are constant up to this
    /// relative RMS deviation.
    #[serde(default)]
    pub constant_tol: Option<f64>,
    /// Check that the second right singular vector has opposite signs on the
    /// two sides of this coordinate (first axis).
    #[serde(default)]
    pub sign_change_at: Option<f64>,
    /// Cells closer than this to `sign_change_at` are ignored.
    #[serde(default = "default_sign_margin")]
    pub sign_margin: f64,
}

fn default_sign_margin() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicSpec {
    pub period: f64,
    pub n_phases: usize,
    pub steps_per_phase: usize,
    #[serde(default = "default_particles")]
    pub n_particles: usize,
    #[serde(default = "default_periods")]
    pub n_periods: usize,
    #[serde(default = "default_periodic_tol")]
    pub l1_tol: f64,
    #[serde(default = "default_periodic_tol")]
    pub average_tol: f64,
}

fn default_particles() -> usize {
    1_000_000
}

fn default_periods() -> usize {
    200
}

fn default_periodic_tol() -> f64 {
    0.02
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuitySpec {
    /// Base-drift shift `b'`, scaled by each epsilon.
    pub shift: GammaSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscontinuitySpec {
    /// Noise levels, decreasing; each replaces the model's `sigma`.
    pub sigmas: Vec<f64>,
    /// Diameters of the sets `A_n`, decreasing.
    pub widths: Vec<f64>,
    /// Constant drift offset between the two systems.
    pub offset: f64,
    pub center: Vec<f64>,
    /// Lower bound on the distance at the smallest noise and width.
    #[serde(default = "default_min_distance")]
    pub min_distance: f64,
    /// Upper bound on the distance at the largest noise and smallest width.
    #[serde(default = "default_max_distance")]
    pub max_distance: f64,
}

fn default_min_distance() -> f64 {
    1.8
}

fn default_max_distance() -> f64 {
    0.5
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: Option<f64>) -> Result<f64> {
    match (params.get(key), default) {
        (Some(v), _) => Ok(*v),
        (None, Some(d)) => Ok(d),
        (None, None) => Err(Error::config(format!("model.params.{key}"), "required parameter missing")),
    }
}

/// Names of the built-in models.
pub const MODEL_NAMES: [&str; 5] = ["brownian", "constant_drift", "ornstein_uhlenbeck", "double_well", "periodic_tilt"];

impl ModelSpec {
    fn allowed(&self) -> Result<&'static [&'static str]> {
        Ok(match self.name.as_str() {
            "brownian" => &["sigma", "dim"],
            "constant_drift" => &["drift", "sigma"],
            "ornstein_uhlenbeck" => &["theta", "mean", "sigma"],
            "double_well" => &["sigma"],
            "periodic_tilt" => &["amplitude", "period", "sigma"],
            other => {
                return Err(Error::config(
                    "model.name",
                    format!("unknown built-in `{other}`; expected one of {}", MODEL_NAMES.join(", ")),
                ))
            }
        })
    }

    fn validate(&self) -> Result<()> {
        let allowed = self.allowed()?;
        if let Some(k) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::config(
                format!("model.params.{k}"),
                format!("not a parameter of `{}` (allowed: {})", self.name, allowed.join(", ")),
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<SdeModel> {
        self.validate()?;
        let p = &self.params;
        let wrap = |e: Error| Error::config("model", e.to_string());
        match self.name.as_str() {
            "brownian" => {
                let dim = param(p, "dim", Some(1.0))?;
                if dim < 1.0 || dim.fract() != 0.0 {
                    return Err(Error::config("model.params.dim", "must be a positive integer"));
                }
                SdeModel::brownian(dim as usize, param(p, "sigma", Some(1.0))?, MODEL_HORIZON)
            }
            "constant_drift" => SdeModel::constant_drift(param(p, "drift", None)?, param(p, "sigma", Some(1.0))?, MODEL_HORIZON),
            "ornstein_uhlenbeck" => SdeModel::ornstein_uhlenbeck(
                param(p, "theta", None)?,
                param(p, "mean", Some(0.0))?,
                param(p, "sigma", Some(1.0))?,
                MODEL_HORIZON,
            ),
            "double_well" => SdeModel::double_well(param(p, "sigma", None)?, MODEL_HORIZON),
            "periodic_tilt" => SdeModel::periodic_tilt(
                param(p, "amplitude", None)?,
                param(p, "period", None)?,
                param(p, "sigma", Some(1.0))?,
                MODEL_HORIZON,
            ),
            _ => unreachable!("checked by validate"),
        }
        .map_err(wrap)
    }

    /// The same model with `sigma` replaced.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        let mut out = self.clone();
        out.params.insert("sigma".into(), sigma);
        out
    }
}

impl GammaSpec {
    pub fn build(&self, dim: usize, domain: &Domain) -> Result<PerturbationField> {
        let field = |e: Error| Error::config("gamma", e.to_string());
        let out = match self {
            GammaSpec::Zero => PerturbationField::zero(dim),
            GammaSpec::Constant { values } => PerturbationField::constant(values.clone()),
            GammaSpec::Bump {
                center,
                width,
                amplitude,
            } => PerturbationField::gaussian_bump(center.clone(), *width, amplitude.clone()).map_err(field)?,
            GammaSpec::Linear { slope, radius } => {
                let radius = match (radius, domain.bounds()) {
                    (Some(r), _) => *r,
                    (None, Some((lo, hi))) => lo.iter().chain(hi).fold(0.0f64, |m, v| m.max(v.abs())),
                    (None, None) => {
                        return Err(Error::config("gamma.radius", "required for a linear field on an unbounded domain"))
                    }
                };
                PerturbationField::linear(*slope, dim, radius).map_err(field)?
            }
            GammaSpec::Ramp { slope } => PerturbationField::time_ramp(*slope, MODEL_HORIZON),
        };
        if out.dim() != dim {
            return Err(Error::config(
                "gamma",
                format!("dimension {} does not match the model dimension {dim}", out.dim()),
            ));
        }
        Ok(out)
    }
}

impl ObservableSpec {
    pub fn build(&self, t_end: f64) -> Result<Observable> {
        match self {
            ObservableSpec::Power {
                time,
                component,
                power,
                bound,
            } => Observable::marginal_power(time.unwrap_or(t_end), *component, *power, *bound)
                .map_err(|e| Error::config("observable", e.to_string())),
        }
    }

    pub fn component(&self) -> usize {
        match self {
            ObservableSpec::Power { component, .. } => *component,
        }
    }
}

fn require<'a, T>(value: &'a Option<T>, field: &str, kind: ExperimentKind) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::config(field, format!("section required by `{}`", kind.name())))
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = match e.span() {
                Some(span) => format!("line {}", text[..span.start.min(text.len())].matches('\n').count() + 1),
                None => "document".to_string(),
            };
            Error::config(field, e.message().trim().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("document", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        let model = self.model.build()?;
        let domain = self.domain()?;
        if domain.dim() != model.dim() {
            return Err(Error::config(
                "domain",
                format!("dimension {} does not match the model dimension {}", domain.dim(), model.dim()),
            ));
        }
        self.time_grid()?;
        if let Some(x0) = &self.x0 {
            if x0.len() != model.dim() {
                return Err(Error::config("x0", format!("expected {} components, got {}", model.dim(), x0.len())));
            }
            if !domain.contains(x0) {
                return Err(Error::config("x0", "initial point lies outside the domain"));
            }
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::config("epsilons", "every epsilon must be positive"));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("epsilons", "must be strictly decreasing"));
        }
        if self.mc.n_paths < 2 || self.mc.n_paths_per_cell < 2 {
            return Err(Error::config("mc", "need at least two paths"));
        }
        let min_eps = match kind {
            ExperimentKind::RemainderScaling | ExperimentKind::EigenResponse => 3,
            ExperimentKind::OperatorResponse | ExperimentKind::ContinuityScan => 2,
            _ => 0,
        };
        if self.epsilons.len() < min_eps {
            return Err(Error::config(
                "epsilons",
                format!("`{}` needs at least {min_eps} values", kind.name()),
            ));
        }
        let needs_gamma = !matches!(
            kind,
            ExperimentKind::CoherentSets | ExperimentKind::PeriodicForcing | ExperimentKind::DiscontinuityDemo
        );
        if needs_gamma {
            require(&self.gamma, "gamma", kind)?;
        }
        if let Some(g) = &self.gamma {
            g.build(model.dim(), &domain)?;
        }
        let needs_observable = matches!(
            kind,
            ExperimentKind::DerivativeCheck | ExperimentKind::RemainderScaling | ExperimentKind::ContinuityScan
        );
        if needs_observable {
            require(&self.observable, "observable", kind)?;
        }
        if let Some(o) = &self.observable {
            o.build(self.time.t_end)?;
            if o.component() >= model.dim() {
                return Err(Error::config("observable.component", "exceeds the model dimension"));
            }
        }
        let needs_grid = matches!(
            kind,
            ExperimentKind::OperatorResponse
                | ExperimentKind::EigenResponse
                | ExperimentKind::CoherentSets
                | ExperimentKind::PeriodicForcing
                | ExperimentKind::DiscontinuityDemo
        );
        if needs_grid {
            require(&self.grid, "grid", kind)?;
            if !domain.is_box() {
                return Err(Error::config("domain", format!("`{}` needs a box domain", kind.name())));
            }
        }
        if let Some(g) = &self.grid {
            if g.boxes_per_axis < 2 {
                return Err(Error::config("grid.boxes_per_axis", "must be at least 2"));
            }
        }
        match kind {
            ExperimentKind::EigenResponse => {
                let e = require(&self.eigen, "eigen", kind)?;
                if e.index == 0 || e.index > e.n_pairs {
                    return Err(Error::config("eigen.index", "must lie in 1..=n_pairs"));
                }
                if let Some(fd) = e.fd_epsilon {
                    if !self.epsilons.contains(&fd) {
                        return Err(Error::config("eigen.fd_epsilon", "must be one of `epsilons`"));
                    }
                }
            }
            ExperimentKind::CoherentSets => {
                require(&self.coherent, "coherent", kind)?;
            }
            ExperimentKind::PeriodicForcing => {
                let p = require(&self.periodic, "periodic", kind)?;
                if !(p.period > 0.0) || p.n_phases == 0 || p.steps_per_phase == 0 || p.n_particles == 0 || p.n_periods == 0
                {
                    return Err(Error::config("periodic", "period, counts and sizes must be positive"));
                }
                if let Some(tau) = self.model.params.get("period") {
                    if (tau - p.period).abs() > 1e-12 * p.period {
                        return Err(Error::config(
                            "periodic.period",
                            format!("differs from model.params.period = {tau}"),
                        ));
                    }
                }
            }
            ExperimentKind::ContinuityScan => {
                let c = require(&self.continuity, "continuity", kind)?;
                c.shift.build(model.dim(), &domain)?;
            }
            ExperimentKind::DiscontinuityDemo => {
                let d = require(&self.discontinuity, "discontinuity", kind)?;
                let decreasing = |v: &[f64]| !v.is_empty() && v.iter().all(|x| *x > 0.0) && v.windows(2).all(|w| w[1] < w[0]);
                if !decreasing(&d.sigmas) {
                    return Err(Error::config("discontinuity.sigmas", "must be positive and strictly decreasing"));
                }
                if !decreasing(&d.widths) {
                    return Err(Error::config("discontinuity.widths", "must be positive and strictly decreasing"));
                }
                if d.center.len() != model.dim() {
                    return Err(Error::config("discontinuity.center", "dimension mismatch"));
                }
                if !self.model.allowed()?.contains(&"sigma") {
                    return Err(Error::config("model.name", "model has no `sigma` parameter to vary"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<Domain> {
        match &self.domain {
            Some(d) => Domain::new_box(d.lower.clone(), d.upper.clone()).map_err(|e| Error::config("domain", e.to_string())),
            None => Ok(Domain::unbounded(self.model.build()?.dim())),
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.t_end, self.time.n_steps).map_err(|e| Error::config("time", e.to_string()))
    }

    /// `x0`, defaulting to the domain centre (or the origin).
    pub fn initial_point(&self) -> Result<Vec<f64>> {
        if let Some(x0) = &self.x0 {
            return Ok(x0.clone());
        }
        let domain = self.domain()?;
        Ok(match domain.bounds() {
            Some((lo, hi)) => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            None => vec![0.0; domain.dim()],
        })
    }
}
