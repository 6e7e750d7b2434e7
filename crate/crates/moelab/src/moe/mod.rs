//! The toy MoE classifier: architecture, top-k routing, forward/backward
//! passes, the composite training objective, and checkpoint I/O.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod loss;
pub mod model;
pub mod routing;
pub mod train;

pub use checkpoint::{from_checkpoint, load, model_hash, save, to_checkpoint, Checkpoint, Provenance};
pub use config::ModelConfig;
pub use forward::{accuracy, composite_loss, forward, loss_and_grads, AuxLosses, ForwardResult, LossParts, TraceEntry};
pub use loss::{entanglement_loss, load_balance_loss};
pub use model::{build_model, Adapter, ExpertMlp, MoeLayer, MoeModel, ParamLayout};
pub use routing::{route, RouteResult};
pub use train::{train, EpochRecord, TrainHistory, TrainParams};
