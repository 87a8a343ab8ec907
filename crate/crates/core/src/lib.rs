//! Bayesian optimization over several machine-learning algorithms at once.
//!
//! Every algorithm's hyper-parameter space is embedded by a small MLP into
//! one shared latent space, where a multi-task Gaussian process models the
//! validation score of all algorithms jointly. The embeddings are pre-trained
//! on previously observed source datasets (with an adversarial term that
//! forces the algorithms' embeddings to overlap), and a learning-to-rank
//! model picks which pre-trained embedding to start from for a new target.

pub mod error;
pub mod space;
pub mod embed;
pub mod obs;
pub mod optim;
pub mod surrogate;
pub mod bench;
pub mod acquire;
pub mod pretrain;
pub mod rank;
pub mod driver;
pub mod config;

pub use error::{Error, Result};
