//! Weak-value tomography of pure states in `N` dimensions and the geometry of
//! its measurement errors.
//!
//! The weak values `w_i = <b|i><i|ψ>/<b|ψ>` of the projectors onto an
//! observable's eigenbasis, taken with a fixed post-selection `|b>`, serve as
//! complex coordinates on the projective state space. In these coordinates the
//! Fubini–Study metric derives from the Kähler potential
//! `K = 4 ln Σ|w_i/b_i|^2`, which fixes the volume element and, for a
//! state-independent statistical error `Δ_s`, the error volume. Averaged over
//! states, that volume scales as `1/Π|b_i|^2` and is therefore smallest when
//! `|b>` is unbiased with respect to the eigenbasis.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod linalg;
pub mod optimizer;
pub mod stateavg;
pub mod states;
pub mod weakvalues;

pub mod cli;

pub use error::{Error, Result};
pub use linalg::{inner, make_generator_basis, outer, CMatrix, CVector, GeneratorBasis};
pub use states::{
    density_from_state, fourier_mub, is_unbiased, phase_fix, sample_haar_state, state_distance, DensityMatrix,
    PostSelection, PureState, RngSeed, SimplexWeights,
};
