//! Feed-forward classifiers with manual backpropagation.

mod checkpoint;
mod layers;
mod network;
mod train;

pub use checkpoint::{decode_network, encode_network, load_network, save_network};
pub use layers::{Conv2d, Dense, Layer, MaxPool2d};
pub use network::{softmax, GradientHead, Network, NetworkBuilder, ParamGrads};
pub use train::{
    accuracy, fine_tune, predictions, train, EpochStats, Optimizer, Schedule, TrainConfig,
    TrainReport, TrainScope, UpdateCounters,
};
