//! Differentiable RGB-domain ISP modules and a reinforcement-learned search
//! over module sequences.

pub mod env;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod isp;
pub mod nets;
pub mod oracle;
pub mod pipeline;
pub mod score;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result, ScorerError};
pub use image::{GradImage, Image, ImageStats};
pub use isp::{ModuleKind, ParamVector};
