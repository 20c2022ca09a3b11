//! Self-adversarial flow matching on analytic toy distributions.
//!
//! The crate trains a small conditional velocity field with an endogenous
//! adversarial signal: an affine shift of the condition embedding creates a
//! second branch of the same network that estimates the model's own
//! generation distribution, and the training objective couples the two.
//! Every identity the construction relies on — the score–velocity bridge,
//! the endpoint–velocity loss equivalences, the gradient equivalence of the
//! mixed objective, the KL-descent direction, and the constant-weight
//! score-difference form of the gradient — is certified numerically against
//! closed-form Gaussian ground truth in [`verify`].
//!
//! Modules follow the pipeline:
//!
//! - [`path`]: the interpolation path, endpoint predictor, and duality maps;
//! - [`oracle`]: analytic mixture distributions with exact scores and
//!   conditional-mean velocities;
//! - [`net`]: the velocity network, condition shifting, and gradient
//!   certification;
//! - [`losses`]: all training objectives and their hand-derived gradients;
//! - [`sampler`]: deterministic integration of the generation flow;
//! - [`trainer`]: the seeded training loop, checkpoints, and metric logs;
//! - [`verify`]: the certification suite;
//! - [`metrics`]: sample-quality measurements;
//! - [`cli`]: the `apex` command-line entry points.
//!
//! The guide under `book/` walks through the same material chapter by
//! chapter; its code snippets compile as doc-tests of this crate.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod sampler;
pub mod trainer;
pub mod util;
pub mod verify;
pub mod path;

pub use error::{ApexError, Result};
