use serde::{Deserialize, Serialize};

/// One completed epoch. Loss components are the lambda-weighted per-epoch
/// means; absent for terms the configuration disables.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auroc: Option<f64>,
    pub loss_ce: Option<f64>,
    pub loss_reg: Option<f64>,
    pub loss_kd: Option<f64>,
    pub wall_time_s: f64,
}

/// Per-epoch training trace (the loss-curve data file).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct TrainLog {
    pub stage: String,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn new(stage: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            epochs: Vec::new(),
        }
    }

    pub fn push(&mut self, record: EpochRecord) {
        debug_assert_eq!(record.epoch, self.epochs.len() + 1, "monotone epoch numbering");
        self.epochs.push(record);
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    pub fn first_train_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.train_loss)
    }

    pub fn best_val_auroc(&self) -> Option<f64> {
        self.epochs
            .iter()
            .filter_map(|e| e.val_auroc)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    /// Everything except wall time, for determinism comparisons.
    pub fn numeric_trace(&self) -> Vec<(usize, u64, u64, Option<u64>)> {
        self.epochs
            .iter()
            .map(|e| {
                (
                    e.epoch,
                    e.train_loss.to_bits(),
                    e.val_loss.to_bits(),
                    e.val_auroc.map(f64::to_bits),
                )
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("epoch,train_loss,val_loss,val_auroc,loss_ce,loss_reg,loss_kd,wall_time_s\n");
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.9}"));
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.9},{:.9},{},{},{},{},{:.3}\n",
                e.epoch,
                e.train_loss,
                e.val_loss,
                fmt(e.val_auroc),
                fmt(e.loss_ce),
                fmt(e.loss_reg),
                fmt(e.loss_kd),
                e.wall_time_s,
            ));
        }
        out
    }
}
