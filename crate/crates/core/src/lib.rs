//! Adversarial color-filter attacks on image classifiers.
//!
//! The crate bundles everything needed to study global color-curve attacks at
//! desk scale: an RGB image type with CIFAR-10 and PPM I/O, the
//! piecewise-linear color filter with closed-form parameter gradients, a small
//! from-scratch CNN, attack objectives, the attacks themselves (gradient-based
//! filter search, random filter search, I-FGSM), input-transformation
//! defenses, adversarial training and an experiment harness that writes
//! reproducible reports.

pub mod adv_training;
pub mod attacks;
pub mod defenses;
pub mod error;
pub mod filter;
pub mod harness;
pub mod image;
pub mod losses;
pub mod synthetic;
pub mod model;

pub use error::{Error, Result};
pub use filter::{apply_filter, filter_param_gradient, sample_params_uniform, FilterParams};
pub use image::{quantize, Dataset, Image, LabeledImage, Split};
pub use model::{Classifier, Model, Trainable};
