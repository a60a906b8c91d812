use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::TrainerConfig;
use crate::metrics::MetricBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    EarlyStopped,
    Diverged,
}

/// Mean losses of one epoch plus validation metrics of the debiasing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean agreement term (plain cross entropy for `erm` and `agree_only`).
    pub agreement: f64,
    /// Mean disagreement term before λ.
    pub disagreement: f64,
    /// Mean objective the debiasing model descended.
    pub objective: f64,
    /// Mean council GCE loss, absent without a council.
    pub gce: Option<f64>,
    pub val: MetricBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainerConfig,
    pub status: RunStatus,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<MetricBlock>,
    pub test: Option<MetricBlock>,
    pub note: Option<String>,
}

impl RunRecord {
    pub fn new(config: TrainerConfig) -> Self {
        Self {
            config,
            status: RunStatus::Running,
            epochs: Vec::new(),
            best_epoch: None,
            best_val: None,
            test: None,
            note: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub const EPOCH_CSV_HEADER: &'static str = "epoch,loss_agr,loss_dis,loss_ad,loss_gce";

    /// Per-epoch table, one row per epoch, validation metrics appended.
    pub fn epochs_csv(&self) -> String {
        let mut out = format!("{},{}\n", Self::EPOCH_CSV_HEADER, MetricBlock::CSV_HEADER);
        for e in &self.epochs {
            let gce = e.gce.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                e.agreement,
                e.disagreement,
                e.objective,
                gce,
                e.val.csv_row()
            )
            .expect("write to string");
        }
        out
    }
}
