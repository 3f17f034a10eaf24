//! Multimodal recurrent-network laboratory.
//!
//! Implements, from first principles: a dense-tensor reverse-mode autodiff
//! engine; LSTM cells, layers and deep stacks; the cross-modal X-LSTM
//! architecture family (cross-connection strategies A/B/N) and the
//! weight-sharing SH-LSTM family (ALL/WSL/CUT); a score-driven parameter
//! budget allocator; synthetic multimodal fitness data with a planted signal
//! plus the preprocessing pipeline for real records; weighted Adam training
//! with stratified cross-validation, ROC/MCC/F1 evaluation and paired
//! t-tests; and confidence-maximizing dream-sequence generation.

pub mod alloc;
pub mod arch;
pub mod crossval;
pub mod data;
pub mod dream;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
