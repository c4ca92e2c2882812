// `!(x > 0.0)` is written on purpose throughout so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical;
pub mod expr;
pub mod gaussian;
pub mod matrix;
pub mod operator;
pub mod quadrature;
pub mod sobolev;
pub mod testfn;
