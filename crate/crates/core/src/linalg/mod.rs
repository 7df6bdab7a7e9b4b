//! Dense linear algebra, normal-distribution functions and seeded sampling.

mod dmat;
mod matrix;
mod normal;
mod power;
mod rng;
mod svd;

pub use dmat::{decode_dmat, encode_dmat, read_dmat, write_dmat, DmatDtype, DMAT_HEADER_LEN};
pub(crate) use matrix::axpy;
pub use matrix::{matmul, matmul_count, DenseMatrix};
pub(crate) use normal::normal_cdf_minus_half;
pub use normal::{normal_cdf, normal_pdf, normal_quantile};
pub use power::power_iteration_sigma_max;
pub use rng::{sample_gaussian_matrix, RngState};
pub use svd::{svd, SvdResult};
