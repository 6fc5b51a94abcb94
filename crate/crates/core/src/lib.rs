//! Discriminative adversarial networks for semi-supervised ranking and
//! text classification.
//!
//! A *predictor* maps an input to a prediction (a class distribution or a
//! list of candidate scores) and never sees labels. A *judge* scores
//! `(input, prediction)` pairs with the probability that the prediction is a
//! human label. The two are trained against each other, so the judge acts
//! as a learned loss for the predictor and unlabeled inputs can be used
//! directly on the predictor side.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory:
//!
//! ```bash
//! cargo run --release --example gradient_check
//! cargo run --release --example rank_synthetic
//! cargo run --release --example classify_synthetic
//! cargo run --release --example semi_supervised
//! cargo run --release --example ranking_metrics
//! cargo run --release --example wikiqa_sweep
//! cargo run --release --example checkpoint_evaluate
//! cargo run --release --example pretrained_embeddings
//! ```

pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
