//! Stage-1 attribute classifiers.

mod model;
mod net;
mod train;

pub use model::{evaluate_accuracy, AttrClassifier, TrainMeta, MODEL_FORMAT_VERSION};
pub use net::{Architecture, Features, Network, Route, Scaler, TdnnConfig, TdnnLayer, LEAKY_SLOPE, POOL_EPS};
pub use train::{train, train_with_observer, LrSchedule, TrainConfig};
