//! Ground truth: quadrature posteriors, the model-error fixed point on a grid,
//! random-walk Metropolis, and summaries.

mod grid;
mod mcmc;
mod summary;

pub use grid::{
    fixed_point_sweep, grid_fixed_point, grid_posterior, kl_grid, relative_sup_change, FixedPoint, GridDensity,
    IntegratedLikelihood,
};
pub use mcmc::{effective_sample_size, mh_sample, MhOutput};
pub use summary::{summarize_grid, summarize_samples, PosteriorSummary, SummarySource, QUANTILE_LEVELS};
