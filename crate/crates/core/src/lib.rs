//! Gaussian head avatars bound to a parametric mesh, with a CPU
//! differentiable splat rasterizer and the training loop around it.

pub mod binding;
pub mod error;
pub mod eval;
pub mod geocorrect;
pub mod headmodel;
pub mod image;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod raster;
pub mod synth;
pub mod texattn;
pub mod trainer;

pub use error::{Error, Result};
pub use headmodel::{HeadModel, HeadParams, Mesh};
pub use image::Image;
pub use raster::Camera;
