//! Desk-scale hand-object interaction (HOI) motion tokenization and
//! bidirectional motion/text sequence modeling.
//!
//! The pipeline: a synthetic HOI data generator ([`kinematics`]), a
//! residual-decomposed vector quantizer with geometric plausibility losses
//! ([`quantizer`], [`geometry`], [`toktrain`]), a unified motion+text token
//! codec ([`codec`]), a small encoder-decoder language model ([`lm`]), and an
//! evaluation harness ([`eval`]). All differentiable pieces run on the
//! reverse-mode tape in [`diff`].

pub mod codec;
pub mod diff;
pub mod eval;
pub mod geometry;
pub mod kinematics;
pub mod lm;
pub mod quantizer;
pub mod toktrain;

pub use kinematics::{HandPose, HoiFrame, HoiSequence, ObjectPose, Rotation6d};
