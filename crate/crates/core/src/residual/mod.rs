//! Low-rank correction of pruning error: truncated-SVD adapters, residual
//! spectra and gradient descent on the residual path.

mod adapter;
mod spectrum;
mod train;

pub(crate) use adapter::{adapter_from_svd, bound_from_svd};
pub use adapter::{build_residual_adapter, verify_theorem3_bound, AdapterPair, ResidualBound};
pub(crate) use spectrum::spectrum_from_values;
pub use spectrum::{spectrum, SpectrumReport, ENERGY_TARGET, RANK_CUTOFF};
pub use train::{
    lipschitz_constant, loss_nonincreasing, optimal_step_size, residual_gradient, residual_loss, train_residual,
    ResidualTrainConfig, StepSize, TrainOutcome,
};
