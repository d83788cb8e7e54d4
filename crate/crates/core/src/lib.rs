//! Numerical toolkit for a-priori generalization bounds of nearly-linear
//! leaky-ReLU networks trained by gradient flow on whitened data.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abound;
pub mod dataio;
pub mod densela;
pub mod netflow;
pub mod ode;
pub mod proxy;
pub mod risk;
pub mod specfun;
