//! Variational inference engine.

mod closed_form;
mod estimate;
mod gradient;
mod kernel;
mod state;
mod svi;
mod train;

pub use closed_form::{
    stick_posterior_from_counts, update_gamma, update_top_prior, SufficientStats, TopPriorUpdate,
    EMPTY_CLUSTER_MASS,
};
pub use estimate::{
    elbo, mc_expected_log_joint, pair_estimate, predict_cluster, predict_many,
    responsibilities_for, update_phi, update_phi_rows,
};
pub use gradient::{grad_step, objective_gradient, objective_value, ObjectiveGradient};
pub use kernel::PairTerms;
pub use state::{
    argmax, HeadStack, PhiInit, InferenceNets, Responsibilities, StickPosterior, SviConfig, TrainConfig,
    VariationalState,
};
pub use svi::{rho_schedule, svi_step};
pub use train::{init_responsibilities, init_responsibilities_dirichlet, train, TraceRecord, TrainOutcome, Trainer};
