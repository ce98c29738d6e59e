//! Learned parts of the grounding system: vision-language backends, the
//! grounding networks, the weakly supervised losses, training, and the
//! end-to-end inference and evaluation pipelines.

pub mod backend;
pub mod desk;
pub mod error;
pub mod losses;
pub mod net;
pub mod pipeline;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use backend::mock::{MockBackend, MockOptions, MockWorldSpec};
pub use backend::{BackendDescriptor, BackendKind, VisionLanguageBackend};
pub use error::{ModelError, Result};
pub use losses::{LossBreakdown, LossWeights};
pub use net::{EncoderKind, GroundingNet, NetConfig, Variant};
pub use pipeline::{evaluate, EvalReport, EvalTask, Prediction, WwblConfig, WwblMode};
pub use trainer::{fit, Cache, Checkpoint, PairDataset, Task, TrainConfig, TrainPair};
