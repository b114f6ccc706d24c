//! Distant-supervision tweet classification.
//!
//! Tweets that link a video inherit the video's category as a "silver"
//! label. The crate covers the whole path from raw JSON-lines dumps to an
//! evaluated classifier:
//!
//! * [`corpus`] joins tweets with video metadata, filters retweets and
//!   duplicates, and draws balanced, seeded splits.
//! * [`textproc`] normalizes and tokenizes short text and implements the
//!   title and hashtag enrichment variants.
//! * [`features`] counts document frequencies, scores terms by information
//!   gain and selects a round-robin feature space.
//! * [`svm`] trains L2-regularized hinge-loss linear models and composes
//!   them one-vs-rest.
//! * [`eval`] computes confusion matrices and macro-averaged metrics and runs
//!   the cross-validation, learning-curve and drift protocols.
//! * [`pipeline`] glues text processing, selection and training together and
//!   owns the model file format.
//! * [`cli`] exposes the pipeline as composable commands.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod pipeline;
pub mod svm;
pub mod textproc;

pub use corpus::{ClassId, ClassScheme, LabeledExample, TweetRecord, VideoMeta};
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, EvalReport};
pub use features::{FeatureSpace, SparseBinaryVector, TermClassCounts};
pub use pipeline::{PipelineConfig, TrainedPipeline, Variant};
pub use svm::{BinaryLinearModel, MulticlassModel, TrainConfig};
pub use textproc::{NormalizeOptions, TokenList};
