use std::io::Write;

use super::TrajectoryRecord;
use crate::util::{mean, norm2};

/// Fraction of the horizon treated as "asymptotic".
const TAIL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// `Σ_t |X(t) - X_des(t)| dt`.
    pub summed_tracking: f64,
    /// Mean over steps of `|X(t + D) - P̂(t)|`.
    pub mean_prediction: f64,
    /// `Σ_t |X(t + D) - P̂(t)| dt`.
    pub summed_prediction: f64,
    pub max_state_norm: f64,
    /// Mean tracking error over the final fifth of the horizon.
    pub asymptotic_residual: f64,
    /// Largest tracking error over the final fifth of the horizon.
    pub plateau: f64,
}

pub fn compute_metrics(record: &TrajectoryRecord) -> Metrics {
    let dt = record.meta.dt;
    let pred: Vec<f64> = record.prediction_error.iter().flatten().copied().collect();
    let len = record.tracking_error.len();
    let tail_start = len - ((len as f64 * TAIL_FRACTION).round() as usize).max(1).min(len);
    let tail = &record.tracking_error[tail_start..];
    Metrics {
        summed_tracking: record.tracking_error.iter().sum::<f64>() * dt,
        mean_prediction: if pred.is_empty() { 0.0 } else { mean(&pred) },
        summed_prediction: pred.iter().sum::<f64>() * dt,
        max_state_norm: record.states.iter().map(|x| norm2(x)).fold(0.0, f64::max),
        asymptotic_residual: if tail.is_empty() { 0.0 } else { mean(tail) },
        plateau: tail.iter().copied().fold(0.0, f64::max),
    }
}

/// One row per step; metadata as leading `#` lines.
pub fn write_record_csv(record: &TrajectoryRecord, mut out: impl Write) -> std::io::Result<()> {
    let meta = &record.meta;
    writeln!(out, "# system={}", meta.system)?;
    writeln!(out, "# predictor={}", meta.predictor)?;
    writeln!(out, "# seeds={:?}", meta.seeds)?;
    if let Some(hash) = &meta.config_hash {
        writeln!(out, "# config_hash={hash}")?;
    }
    writeln!(out, "# dt={} delay={} diverged={} nonconverged_steps={}", meta.dt, meta.delay, meta.diverged, meta.nonconverged_steps)?;

    let n = record.states.first().map_or(0, Vec::len);
    let m = record.inputs.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|j| format!("u{j}")));
    header.extend((0..n).map(|i| format!("p{i}")));
    header.extend((0..m).map(|j| format!("u_delayed{j}")));
    header.extend((0..n).map(|i| format!("ref{i}")));
    header.push("tracking_error".into());
    header.push("prediction_error".into());
    writeln!(out, "{}", header.join(","))?;

    for k in 0..record.len() {
        let mut row = vec![format!("{}", record.times[k])];
        let cols = [&record.states[k], &record.inputs[k], &record.predictions[k], &record.delayed_inputs[k], &record.references[k]];
        for col in cols {
            row.extend(col.iter().map(|v| format!("{v:e}")));
        }
        row.push(format!("{:e}", record.tracking_error[k]));
        row.push(record.prediction_error[k].map_or(String::new(), |e| format!("{e:e}")));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
