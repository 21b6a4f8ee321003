//! Dense N-rank real tensors with reverse-mode automatic differentiation.
//!
//! Built for small 3D vision workloads on the CPU: broadcasting elementwise
//! ops, rank-2 matmul, 3D convolution and its transpose, layer/instance
//! normalization, softmax variants, and movement ops, each with an attached
//! backward rule. Computation defaults to `f32`; every op is generic over
//! [`Scalar`] so gradient-check suites can run the identical graph at `f64`.
//!
//! Parameters are named slots ([`Param`]) persisted in the SKBA container
//! format ([`checkpoint`]). [`gradcheck`] provides the central
//! finite-difference verifier used throughout the test suites.

mod autograd;

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod param;
pub mod scalar;
pub mod shape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use param::{check_unique_names, Param};
pub use scalar::Scalar;
pub use tensor::{sample_standard_normal, Tensor};
