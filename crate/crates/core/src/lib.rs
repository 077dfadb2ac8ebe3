//! Dynamic frame eviction for sliding-window video generation.
//!
//! Frames in a generation window are compared against the window's
//! reference frame with an ORB + RANSAC viewpoint-overlap score. Middle
//! frames that still share the reference viewpoint are redundant and are
//! evicted first; once the overlap breaks, the frame just before the break
//! goes, which releases an old scene after a transition. The most recent
//! frames are never evicted.

pub mod cli;
pub mod drift;
pub mod error;
pub mod eviction;
pub mod frame_io;
pub mod geometry;
pub mod matching;
pub mod orb;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};
pub use eviction::{EvictionConfig, EvictionDecision, EvictionEngine, EvictionTrace, Rule};
pub use frame_io::{load_frame, load_sequence, Frame, FrameSequence, GrayImage};
