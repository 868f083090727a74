//! Video-conditioned motion diffusion on a procedurally generated climbing
//! world: autodiff kernel, avatar geometry, DDPM machinery, a spatio-temporal
//! diffusion transformer, the synthetic data source, training, evaluation and
//! the `sabr` command line.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

pub mod cli;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod tensor;
pub mod train;
pub mod world;

pub use error::{Result, SabrError};
