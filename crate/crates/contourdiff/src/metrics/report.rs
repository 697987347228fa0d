//! Aggregated metric report with uncertainty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean with standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

/// Mean and SEM of a sample; `None` for an empty sample.
pub fn mean_sem(values: &[f64]) -> Option<MetricSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sem = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Some(MetricSummary { mean, sem, n })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    /// Per-volume 3-D Dice.
    pub dsc_per_volume: Vec<f64>,
    /// Per-volume 3-D ASSD (mm). Missing volumes carry a reason instead.
    pub assd_per_volume: Vec<f64>,
    pub assd_missing: Vec<String>,
    /// Per-slice edge HD95 (px).
    pub hd95_per_slice: Vec<f64>,
    pub hd95_missing: Vec<String>,
    pub fid: Option<f64>,
    pub kid: Option<f64>,
    pub dsc: Option<MetricSummary>,
    pub assd: Option<MetricSummary>,
    pub hd95: Option<MetricSummary>,
}

impl MetricReport {
    pub fn new(label: impl Into<String>) -> Self {
        MetricReport {
            label: label.into(),
            ..MetricReport::default()
        }
    }

    /// Recompute the mean/SEM summaries from the raw per-item values.
    pub fn summarize(&mut self) {
        self.dsc = mean_sem(&self.dsc_per_volume);
        self.assd = mean_sem(&self.assd_per_volume);
        self.hd95 = mean_sem(&self.hd95_per_slice);
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &std::path::Path) -> Result<MetricReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))
    }

    /// Plain-text summary row, one line per metric.
    pub fn text_table(&self) -> String {
        let mut out = format!("== {} ==\n", self.label);
        let fmt = |name: &str, s: &Option<MetricSummary>| match s {
            Some(s) => format!("{name}: {:.4} ± {:.4} (n={})\n", s.mean, s.sem, s.n),
            None => format!("{name}: -\n"),
        };
        out.push_str(&fmt("DSC", &self.dsc));
        out.push_str(&fmt("ASSD", &self.assd));
        out.push_str(&fmt("Edge HD95", &self.hd95));
        match self.fid {
            Some(v) => out.push_str(&format!("FID: {v:.4}\n")),
            None => out.push_str("FID: -\n"),
        }
        match self.kid {
            Some(v) => out.push_str(&format!("KID: {v:.4}\n")),
            None => out.push_str("KID: -\n"),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_sem_basic() {
        let s = mean_sem(&[1.0, 2.0, 3.0]).unwrap();
        assert!((s.mean - 2.0).abs() < 1e-12);
        // sample var = 1, sem = sqrt(1/3)
        assert!((s.sem - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.n, 3);
        assert!(mean_sem(&[]).is_none());
        assert_eq!(mean_sem(&[5.0]).unwrap().sem, 0.0);
    }

    #[test]
    fn report_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = MetricReport::new("test");
        report.dsc_per_volume = vec![0.9, 0.8];
        report.hd95_per_slice = vec![1.5, 2.0, 2.5];
        report.fid = Some(12.5);
        report.summarize();
        let path = dir.path().join("report.json");
        report.save_json(&path).unwrap();
        let loaded = MetricReport::load_json(&path).unwrap();
        assert_eq!(loaded.dsc_per_volume, report.dsc_per_volume);
        assert_eq!(loaded.dsc.unwrap().mean, report.dsc.unwrap().mean);
        assert!(report.text_table().contains("DSC"));
    }
}
