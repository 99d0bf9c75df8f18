//! Acoustic road-wetness classification toolkit.
//!
//! Audio from behind a tyre is turned into auditory spectral features
//! (log-Mel bands, rectified deltas, frame energy) or a four-band
//! third-octave set, optionally reduced by information-gain ranking or
//! correlation-based subset search, and classified frame by frame with
//! LSTM/BLSTM networks or an SMO-trained SVM. Evaluation runs the
//! leave-route-out protocol and reports unweighted average recall.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod norm;
pub mod pipeline;
pub mod rnn;
pub mod select;
pub mod svm;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
