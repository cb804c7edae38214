//! SDE models, domains, perturbation fields and path simulation.

mod domain;
mod dump;
mod model;
mod norms;
mod simulate;

pub use domain::{reflect_into_domain, Domain, TimeGrid};
pub use dump::{read_dump, write_dump, PathDump};
pub use model::{MatrixField, PerturbationField, SdeModel, VectorField, ZERO_FIELD_ID};
pub use norms::{estimate_v_norm, validate_model, AssumptionReport, Sampling};
pub(crate) use simulate::integrate;
pub use simulate::{
    path_rng, simulate_ensemble, simulate_path, simulate_path_with_increments, PathEnsemble,
    PathView, SamplePath, Step, EXPLOSION_THRESHOLD,
};
