//! Spatial-audio dataset augmentation toolkit.
//!
//! Simulates room impulse responses for a rigid spherical microphone array,
//! encodes them to Ambisonics, extracts static single-source events from an
//! annotated dataset, purges interference-contaminated segments, enhances the
//! survivors with a CGMM-masked MVDR beamformer, and renders new labeled
//! multichannel mixtures.

pub mod array;
pub mod augment;
pub mod config;
pub mod dsp;
pub mod eliminate;
pub mod enhance;
pub mod error;
pub mod extract;
pub mod io;
pub mod room;
pub mod special;

pub use error::{Error, Result};
