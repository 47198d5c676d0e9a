//! Stationary measures of contracting-on-average affine iterated function
//! systems, their linear response, and explicit witnesses of its failure.

// `!(x > 0.0)` style guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ifs;
pub mod jet;
pub mod moments;
pub mod response;
pub mod rng;
pub mod sampler;
pub mod smooth;
pub mod witness;
