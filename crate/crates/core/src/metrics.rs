//! Sample-level detection scoring against the attack ground truth.

use thiserror::Error;

use crate::run::TimeSeries;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("time series has no detector columns")]
    DetectorColumnsMissing,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelMetrics {
    pub signal: String,
    pub true_positive_samples: usize,
    pub false_positive_samples: usize,
    pub true_negative_samples: usize,
    pub false_negative_samples: usize,
    /// First flag at or after attack onset, relative to onset (s).
    pub detection_latency: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionMetrics {
    pub true_positive_samples: usize,
    pub false_positive_samples: usize,
    pub true_negative_samples: usize,
    pub false_negative_samples: usize,
    /// Earliest latency over all channels.
    pub detection_latency: Option<f64>,
    pub channels: Vec<ChannelMetrics>,
}

pub fn compute_metrics(ts: &TimeSeries) -> Result<DetectionMetrics, MetricsError> {
    let signals = ts.monitored();
    if signals.is_empty() {
        return Err(MetricsError::DetectorColumnsMissing);
    }
    let t = ts.t();
    let truth = ts.col("attack_active");
    let onset = truth.iter().position(|&a| a != 0.0).map(|i| t[i]);
    let mut total = DetectionMetrics::default();
    for signal in signals {
        let flags = ts.col(&format!("det_{signal}_flag"));
        let mut m = ChannelMetrics {
            signal,
            ..Default::default()
        };
        for (&f, &a) in flags.iter().zip(truth) {
            match (f != 0.0, a != 0.0) {
                (true, true) => m.true_positive_samples += 1,
                (true, false) => m.false_positive_samples += 1,
                (false, false) => m.true_negative_samples += 1,
                (false, true) => m.false_negative_samples += 1,
            }
        }
        m.detection_latency = onset.and_then(|start| {
            t.iter()
                .zip(flags)
                .find(|(&ti, &f)| ti >= start && f != 0.0)
                .map(|(&ti, _)| ti - start)
        });
        total.true_positive_samples += m.true_positive_samples;
        total.false_positive_samples += m.false_positive_samples;
        total.true_negative_samples += m.true_negative_samples;
        total.false_negative_samples += m.false_negative_samples;
        total.detection_latency = match (total.detection_latency, m.detection_latency) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        total.channels.push(m);
    }
    Ok(total)
}
