//! Slice-level forward/backward kernels used by the tape. Each function
//! works on flat row-major buffers with explicit extents so it can be
//! benchmarked and tested without a graph.

pub mod conv;
pub mod linear;
pub mod norm;
pub mod reduce;
pub mod relation;
