pub mod checkpoint;
pub mod corpus;
pub mod decoding;
pub mod genmetrics;
pub mod model;
pub mod numerics;
pub mod qaeval;
pub mod textproc;
pub mod training;

pub use corpus::{AnswerKind, DatasetSplit, PreparedExample, RawRecord};
pub use decoding::{BeamConfig, Hypothesis, NucleusConfig, StepModel};
pub use genmetrics::MetricReport;
pub use model::{BertPgn, ModelConfig, ModelError};
pub use numerics::{Tensor, ParamStore};
pub use qaeval::{QaOutput, QaScorer, QaScores};
pub use textproc::{TokenId, Vocab};
pub use training::{EpochRecord, TrainConfig, TrainOutcome};
