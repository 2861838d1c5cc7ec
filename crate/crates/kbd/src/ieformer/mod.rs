//! Daily (macro) price-volume model: an attention encoder over campaign
//! history personalizes interpretable marginal tCPA weights over
//! entropy-optimized cost segments, trained with smoothness and
//! diminishing-returns regularizers plus cross-strategy data augmentation.

pub mod data;
pub mod model;
pub mod partition;
pub mod train;

pub use data::{
    build_samples, convert_to_tcpa, read_day_records, write_day_records, ConvertedTarget,
    DayRecord, HistoryDay, TrainingSample,
};
pub use model::{ModelKind, PriceVolumeModel};
pub use partition::{
    entropy_of_partition, fit_partition_gla, isotonic_embed, PartitionEntropy, PartitionFit,
    PartitionSpec,
};
pub use train::{train_macro, MacroReport, MacroTrainConfig, OptimizerKind};

use crate::substrate::SubstrateError;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum IeformerError {
    InvalidPartition(String),
    InsufficientData(String),
    RecordRejected { campaign_id: u64, day: u32, reason: String },
    Csv { line: usize, message: String },
    Io(String),
    Substrate(SubstrateError),
    Diverged { epoch: usize },
}

impl fmt::Display for IeformerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IeformerError::InvalidPartition(msg) => write!(f, "invalid partition: {msg}"),
            IeformerError::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            IeformerError::RecordRejected { campaign_id, day, reason } => {
                write!(f, "record campaign {campaign_id} day {day} rejected: {reason}")
            }
            IeformerError::Csv { line, message } => write!(f, "day-record line {line}: {message}"),
            IeformerError::Io(msg) => write!(f, "io: {msg}"),
            IeformerError::Substrate(e) => write!(f, "substrate: {e}"),
            IeformerError::Diverged { epoch } => write!(f, "training diverged at epoch {epoch}"),
        }
    }
}

impl std::error::Error for IeformerError {}

impl From<SubstrateError> for IeformerError {
    fn from(e: SubstrateError) -> Self {
        IeformerError::Substrate(e)
    }
}
