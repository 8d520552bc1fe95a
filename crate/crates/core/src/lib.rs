//! Nonlinear low-rank approximation of one-hidden-layer network weights.
//!
//! Given full-rank weights `W` (`d x m`) and a target rank `r`, the goal is a
//! rank-`r` matrix `Y` minimizing `E_x ||sigma(x^T Y) - sigma(x^T W)||^2` for
//! standard Gaussian inputs. The crate provides:
//!
//! - [`linalg`]: dense matrices, SVD, eigendecomposition and seeded sampling.
//! - [`hermite`] and [`kernel`]: the ReLU correlation function, its Hermite
//!   series and nonlinearity kernels (closed form, quadrature and empirical).
//! - [`risk`]: exact ReLU risk, Monte Carlo risk and its gradients.
//! - [`approx`]: spectral initialization, kernel-PCA approximation, ReLU SVD
//!   and stochastic layerwise optimization.
//! - [`learning`]: learning a low-rank ReLU layer from samples only.
//! - [`gap`]: how far truncated SVD is from the rescaled solution, and
//!   spherical-weight sweeps.

pub mod activation;
pub mod approx;
pub mod error;
pub mod gap;
pub mod hermite;
pub mod kernel;
pub mod learning;
pub mod linalg;
pub mod quadrature;
pub mod risk;

pub use activation::Activation;
pub use approx::{
    lfai, nkp, nkp_with_kernel, relu_svd, relu_svd_score, relu_svd_with_mask, spectral_init,
    FactorPair, LambdaMask, LfaiOptions, LfaiOutput, NkpOutput, ReluSvdOutput,
};
pub use error::{NlraError, Result};
pub use gap::{gap_lower_bound, rho_svd, sample_spherical_w, spherical_sweep, RhoVector, SweepConfig, SweepRow};
pub use hermite::{h, hermite_coeff_relu, sqrt_h_closed, sqrt_h_series};
pub use kernel::{
    estimate_kernel, kernel_general, kernel_matrix, kernel_relu, KernelMatrix,
};
pub use learning::{
    davis_kahan_check, recover_relu_column, recover_w, shallow_learn, KernelSource, LearnReport,
    SampleOracle, ShallowLearnOptions,
};
pub use linalg::{sample_gaussian_matrix, svd, sym_eig_top_r, truncated_svd, DenseMatrix, RngSeed, SvdResult};
pub use risk::{risk_mc, risk_mc_gradient, risk_relu_exact, RiskMethod, RiskReport};
