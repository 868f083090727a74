//! The denoiser `G(x^t, t, c)`: motion tokens, interleaved spatial and
//! temporal transformer blocks with adaLN-Zero gating and cross-attention,
//! zero-initialized output heads, and the motion codec.

mod config;
mod dit;
mod motion;

pub use config::{motion_groups, ModelConfig};
pub use dit::{attention, AttentionTrace, AttentionVars, Bound, LinearVars, ParamStore, SabrDit};
pub use motion::{
    decode_motion, encode_motion, motion_frames, DecodedMotion, MotionFrame, NormStats, STD_FLOOR,
};

#[cfg(test)]
mod tests;
