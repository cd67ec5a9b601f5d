//! Semi-supervised multi-label sound event detection with paired self-training models.
//!
//! This crate holds every algorithm of the laboratory and nothing that touches
//! a filesystem: synthetic scene generation and log-Mel features, a small
//! convolutional-recurrent network with hand-written reverse-mode gradients,
//! pseudo-label estimation, reliability weights, the training objectives and
//! loop, classwise post-processing with extreme-value thresholds, and
//! collar-based event scoring.
//!
//! The crate is `no_std` and needs only `alloc`. File formats and the command
//! line live in the `crst-lab` companion crate.
#![cfg_attr(not(test), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod error;
pub mod evalkit;
pub mod grid;
pub mod losses;
pub mod math;
pub mod model;
pub mod postproc;
pub mod pseudolabel;
pub mod reliability;
pub mod rng;
pub mod seqdata;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{FeatureGrid, Grid, PosteriorGrid, PseudoLabelGrid, StrongLabelGrid, WeakLabel};
