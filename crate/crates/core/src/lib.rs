//! Effective seven-level model of CPT clock resonances in ⁸⁷Rb with
//! optical repumping: steady-state Lindblad dynamics, cell propagation,
//! Voigt lineshape fitting and intensity-sweep campaigns.

// NaN must fail range checks, hence `!(x >= lo)` style comparisons
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod experiments;
pub mod lineshape;
pub mod liouvillian;
pub mod model;
pub mod spectroscopy;
pub mod wigner;
