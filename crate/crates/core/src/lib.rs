//! Trajectory prediction with temporal attention, a social graph attention
//! module and a pseudo-oracle latent predictor.

pub mod error;
pub mod cli;
pub mod generator;
pub mod gradcheck;
pub mod nn;
pub mod pseudo_oracle;
pub mod scene_data;
pub mod social_graph;
pub mod ta_encoder;
pub mod tape;
pub mod train_eval;

pub use error::{Error, Result};
pub use generator::{AblationConfig, Model, ModelDims, Prediction};
pub use pseudo_oracle::Stage;
pub use scene_data::{Point, SceneWindow, TrackRecord};
pub use social_graph::SocialMode;
pub use train_eval::{EvalReport, LossRecord, TrainConfig};
