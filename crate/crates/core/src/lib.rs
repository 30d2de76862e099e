//! Retrain- and fine-tune-based evaluation of gradient feature attributions.

mod binio;
pub mod data;
pub mod error;
pub mod explain;
pub mod harness;
pub mod manipulate;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod schemes;
pub mod tensor;
pub mod theory;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type Dataset32 = data::LabeledDataset<f32>;
pub type Dataset64 = data::LabeledDataset<f64>;
pub type DataSplit32 = data::DataSplit<f32>;
pub type DataSplit64 = data::DataSplit<f64>;
pub type AttributionMap32 = explain::AttributionMap<f32>;
pub type AttributionMap64 = explain::AttributionMap<f64>;
