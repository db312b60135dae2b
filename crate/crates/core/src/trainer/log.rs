use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::AggregateReport;
use super::{EVAL_LOG_FILE, LOG_FILE, LR_FILE};
use crate::blur_synth::dataset::write_json;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub epoch: usize,
    /// 1-based optimizer step.
    pub iteration: usize,
    pub lr: f64,
    pub total: f64,
    pub photometric: f64,
    pub consistency: f64,
    pub penalty: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub iterations: Vec<IterationRecord>,
    /// `(epoch, lr)` for every epoch entered.
    pub lr_trace: Vec<(usize, f64)>,
    pub evals: Vec<(usize, AggregateReport)>,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

impl RunLog {
    /// Moving average of the total loss over `window` steps (one value per full window).
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let losses: Vec<f64> = self.iterations.iter().map(|r| r.total).collect();
        if window == 0 || losses.len() < window {
            return Vec::new();
        }
        losses
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect()
    }

    /// Writes the iteration log, lr trace and evaluation history into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(LOG_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        for r in &self.iterations {
            w.serialize(r).map_err(csv_err(&path))?;
        }
        if self.iterations.is_empty() {
            w.write_record([
                "epoch",
                "iteration",
                "lr",
                "total",
                "photometric",
                "consistency",
                "penalty",
            ])
            .map_err(csv_err(&path))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(LR_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["epoch", "lr"]).map_err(csv_err(&path))?;
        for (e, lr) in &self.lr_trace {
            w.write_record([e.to_string(), lr.to_string()])
                .map_err(csv_err(&path))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        if !self.evals.is_empty() {
            let evals: Vec<_> = self
                .evals
                .iter()
                .map(|(e, r)| serde_json::json!({ "epoch": e, "report": r }))
                .collect();
            write_json(&dir.join(EVAL_LOG_FILE), &evals)?;
        }
        Ok(())
    }

    pub fn read_iterations(path: &Path) -> Result<Vec<IterationRecord>> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
        r.deserialize().map(|row| row.map_err(csv_err(path))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = RunLog {
            iterations: (1..=3)
                .map(|i| IterationRecord {
                    epoch: 1,
                    iteration: i,
                    lr: 1e-4,
                    total: 1.0 / i as f64,
                    photometric: 0.5,
                    consistency: 0.0,
                    penalty: -0.1,
                })
                .collect(),
            lr_trace: vec![(1, 1e-4)],
            evals: Vec::new(),
        };
        log.write(dir.path()).unwrap();
        let back = RunLog::read_iterations(&dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(back, log.iterations);
        assert_eq!(log.moving_average(2).len(), 2);
    }
}
