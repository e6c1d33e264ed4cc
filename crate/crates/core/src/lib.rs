pub mod backend;
pub mod calibration;
pub mod dataset;
pub mod elicit;
pub mod io;
pub mod kt;
pub mod parser;
mod pool;
pub mod prompting;
pub mod sweep;

pub use backend::{Client, CompletionRequest, GenerationParams};
pub use calibration::{Arm, EvalRecord, EvalReport, Method, MetricOptions};
pub use dataset::{DatasetSpec, Label, TaskItem, TaskKind};
pub use kt::{CotRecord, TrainExample, TrainingManifest};
pub use parser::{ParseStatus, ParsedPrediction};
