//! Small differentiable models, their training loop and the radio toy world.

mod check;
mod network;
mod optim;
mod radio;
mod train;
mod weights;

pub use check::{finite_diff_check, finite_diff_check_network, CheckStatus, FiniteDiffReport};
pub use network::{Dims, Layer, LayerSpec, Network, Task};
pub use optim::Adam;
pub use radio::{
    erase_buildings, radio_shape, simulate_radio, Building, LineOfSightPredictor, MapPredictor, Propagation,
    RadioSample, RadioToyWorld, WorldConfig,
};
pub use train::{
    accuracy, interpretation_loss, mean_squared_error, train_model, Example, InterpretationTarget, Target,
    TrainConfig, TrainReport,
};
