//! Dense linear algebra, ReLU networks with exact gradients, Adam and
//! spectral-norm utilities.

pub mod adam;
pub mod linalg;
pub mod matrix;
pub mod mlp;
pub mod spectral;

pub use adam::{adam_step, AdamState};
pub use linalg::{cholesky_spd, inverse_spd, jacobi_eigenvalues, logdet_spd, solve_spd};
pub use matrix::{dot, norm2, DenseMatrix};
pub use mlp::{input_gradient_sq_norm, mlp_backward, mlp_forward, ForwardCache, Layer, MlpGrads, MlpParams};
pub use spectral::{one_sided_sn_project, sigma_max, sigma_max_converged, Projection, SigmaEstimate};
