use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Scalars reported after each update. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub update: usize,
    pub env_steps: u64,
    pub episodes: usize,
    pub loss: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub template_loss: f64,
    pub object_loss: f64,
    pub entropy_loss: f64,
    pub grad_norm: f64,
    /// Mean final score of the most recent finished episodes.
    pub mean_score: f64,
    pub mean_reward: f64,
    pub mean_valid_actions: f64,
    pub mean_mask_size: f64,
    /// Fraction of executed actions that were valid.
    pub valid_rate: f64,
    pub decoded_objects: u64,
    pub mask_violations: u64,
    pub degraded_workers: usize,
}

/// Appends one JSON object per line.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        Ok(MetricsLog {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, m: &UpdateMetrics) -> Result<(), TrainError> {
        let line = serde_json::to_string(m).map_err(|e| TrainError::Io(e.to_string()))?;
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Vec<UpdateMetrics>, TrainError> {
        let reader = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| TrainError::Io(e.to_string()))?);
        }
        Ok(out)
    }
}

pub fn write_csv(path: &Path, metrics: &[UpdateMetrics]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TrainError::Io(e.to_string()))?;
    for m in metrics {
        w.serialize(m).map_err(|e| TrainError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and population standard deviation; zeros when empty.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
