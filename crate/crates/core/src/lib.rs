//! Dense distortion-field estimation and rectification for fingerprint
//! images.
//!
//! The crate covers the full pipeline: rigid-free ground-truth fields from
//! corresponding minutiae and thin-plate splines, synthetic training data,
//! a convolutional field regressor with hand-written gradients, a PCA
//! baseline and the evaluation metrics.

pub mod config;
pub mod error;
pub mod eval;
pub mod field;
pub mod geom;
pub mod io;
pub mod minutiae;
pub mod nn;
pub mod pca;
pub mod raster;
pub mod synth;
pub mod tps;

pub use error::{Error, Result};
pub use field::{rectify, remove_dc, upsample_field, DistortionField, BLOCK_SIZE};
pub use geom::{fit_rigid, RigidTransform, Vec2};
pub use minutiae::{sparse_field, MinutiaSet};
pub use raster::{FingerMask, GrayImage, GridMask};
pub use tps::{tps_eval_dense, tps_fit, TpsCoefficients};
