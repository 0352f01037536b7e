//! Layout-graph document comparison.
//!
//! Blocks of two document versions are turned into attributed layout graphs,
//! matched with an iterative cross-graph network whose soft correspondence is
//! Sinkhorn-normalized, and the matched pairs are diffed word by word.

pub mod diff;
pub mod doc;
pub mod encoder;
pub mod featurize;
pub mod gradsuite;
pub mod matcher;
pub mod nn;
pub mod pdfmini;
pub mod synth;
pub mod textembed;
pub mod train;
