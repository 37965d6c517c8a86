//! Adversarial patches against a toy differentiable detector, and their
//! principal components ("eigenpatches").

mod binio;
pub mod attack;
pub mod boxes;
pub mod data;
pub mod detector;
pub mod diffmath;
pub mod eigen;
pub mod error;
pub mod imageio;
pub mod metrics;
pub mod optim;
pub mod patchset;
pub mod selfcheck;

pub use error::{Error, Result};
