//! Neural association models: feed-forward networks scoring the
//! conditional probability `Pr(E2 | E1)` of two discrete events.
//!
//! Two network families are provided. The plain DNN feeds `[head, relation
//! code]` through ReLU layers and scores the tail by a dot product; the
//! relation-modulated network (RMNN) additionally injects the relation code
//! into every layer and the output. Around them sit maximum-likelihood SGD
//! training with negative sampling, dev-tuned triple classification,
//! relation-code transfer learning and cause-effect schema resolution.

pub mod checkpoint;
pub mod error;
pub mod evaluator;
pub mod kb;
pub mod math;
pub mod model;
pub mod synth;
pub mod trainer;
pub mod transfer;
pub mod winograd;

pub use error::{NamError, Result};
