//! Ablation and robustness sweeps: expand one experiment axis into a
//! list of settings, run the full pipeline per setting with shared
//! seeds, and consolidate the results with deltas against the baseline.

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::dataio::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::phantom::PhantomDataset;
use crate::pipeline::{run_setting, StageOptions, TranslatorCache};

/// One sweepable axis. Every axis varies exactly one knob; everything
/// else stays at the baseline value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentAxis {
    ScgdOnOff,
    PAdj,
    CannyThresholds,
    Snr,
    Contrast,
    NCandidates,
    CandidateRank,
    BitDepth,
}

impl ExperimentAxis {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentAxis::ScgdOnOff => "scgd_on_off",
            ExperimentAxis::PAdj => "p_adj",
            ExperimentAxis::CannyThresholds => "canny_thresholds",
            ExperimentAxis::Snr => "snr",
            ExperimentAxis::Contrast => "contrast",
            ExperimentAxis::NCandidates => "n_candidates",
            ExperimentAxis::CandidateRank => "candidate_rank",
            ExperimentAxis::BitDepth => "bit_depth",
        }
    }
}

pub fn parse_axis(name: &str) -> Result<ExperimentAxis> {
    match name {
        "scgd_on_off" => Ok(ExperimentAxis::ScgdOnOff),
        "p_adj" => Ok(ExperimentAxis::PAdj),
        "canny_thresholds" => Ok(ExperimentAxis::CannyThresholds),
        "snr" => Ok(ExperimentAxis::Snr),
        "contrast" => Ok(ExperimentAxis::Contrast),
        "n_candidates" => Ok(ExperimentAxis::NCandidates),
        "candidate_rank" => Ok(ExperimentAxis::CandidateRank),
        "bit_depth" => Ok(ExperimentAxis::BitDepth),
        other => Err(Error::UnknownAxis(other.to_string())),
    }
}

/// A fully resolved pipeline setting; the first expanded setting of an
/// axis is the baseline the others are compared against.
#[derive(Debug, Clone)]
pub struct ExperimentSetting {
    pub name: String,
    pub config: RunConfig,
    pub options: StageOptions,
}

/// Expand an axis into its default sweep grid, baseline first.
pub fn expand_axis(axis: ExperimentAxis, base: &RunConfig) -> Vec<ExperimentSetting> {
    let setting = |name: String, config: RunConfig, options: StageOptions| ExperimentSetting {
        name,
        config,
        options,
    };
    let default = StageOptions::default();
    match axis {
        ExperimentAxis::ScgdOnOff => {
            let mut off = default;
            off.translation.adjacent_conditioning = false;
            vec![
                setting("scgd=on".into(), base.clone(), default),
                setting("scgd=off".into(), base.clone(), off),
            ]
        }
        ExperimentAxis::PAdj => [0.2, 0.5, 0.8, 1.0]
            .iter()
            .map(|&p| {
                let mut config = base.clone();
                config.p_adj = p;
                setting(format!("p_adj={p}"), config, default)
            })
            .collect(),
        ExperimentAxis::CannyThresholds => [(30.0, 50.0), (20.0, 40.0), (40.0, 70.0)]
            .iter()
            .map(|&(low, high)| {
                let mut config = base.clone();
                config.canny_low_input = low;
                config.canny_high_input = high;
                setting(format!("canny_in=({low},{high})"), config, default)
            })
            .collect(),
        ExperimentAxis::Snr => [None, Some(30.0), Some(25.0), Some(15.0)]
            .iter()
            .map(|&snr_db| {
                let options = StageOptions { snr_db, ..default };
                let name = match snr_db {
                    None => "snr=inf".to_string(),
                    Some(db) => format!("snr={db}dB"),
                };
                setting(name, base.clone(), options)
            })
            .collect(),
        ExperimentAxis::Contrast => [1.0f32, 0.8, 1.2]
            .iter()
            .map(|&k| {
                let options = StageOptions {
                    contrast: Some(k),
                    ..default
                };
                setting(format!("contrast={k}"), base.clone(), options)
            })
            .collect(),
        ExperimentAxis::NCandidates => {
            let mut grid = vec![base.n_candidates, 1, 16];
            grid.dedup();
            grid.iter()
                .map(|&n| {
                    let mut config = base.clone();
                    config.n_candidates = n;
                    setting(format!("n_candidates={n}"), config, default)
                })
                .collect()
        }
        ExperimentAxis::CandidateRank => {
            let mut ranks = vec![0, base.n_candidates / 2, base.n_candidates - 1];
            ranks.dedup();
            ranks
                .iter()
                .map(|&rank| {
                    let mut options = default;
                    options.translation.candidate_rank = rank;
                    setting(format!("candidate_rank={rank}"), base.clone(), options)
                })
                .collect()
        }
        ExperimentAxis::BitDepth => [8u8, 12]
            .iter()
            .map(|&bits| {
                let options = StageOptions {
                    bit_depth: Some(bits),
                    ..default
                };
                setting(format!("bit_depth={bits}"), base.clone(), options)
            })
            .collect(),
    }
}

/// Everything except the swept knob, rendered to a comparable string.
/// Used to assert that expanded settings differ only along their axis.
fn isolation_fingerprint(
    setting: &ExperimentSetting,
    axis: ExperimentAxis,
    base: &RunConfig,
) -> String {
    let mut config = setting.config.clone();
    let mut options = setting.options;
    match axis {
        ExperimentAxis::ScgdOnOff => options.translation.adjacent_conditioning = true,
        ExperimentAxis::PAdj => config.p_adj = base.p_adj,
        ExperimentAxis::CannyThresholds => {
            config.canny_low_input = base.canny_low_input;
            config.canny_high_input = base.canny_high_input;
        }
        ExperimentAxis::Snr => options.snr_db = None,
        ExperimentAxis::Contrast => options.contrast = None,
        ExperimentAxis::NCandidates => config.n_candidates = base.n_candidates,
        ExperimentAxis::CandidateRank => options.translation.candidate_rank = 0,
        ExperimentAxis::BitDepth => options.bit_depth = None,
    }
    format!(
        "{}|{options:?}",
        toml::to_string(&config).expect("config serializes")
    )
}

/// Verify that every setting matches the baseline once the swept knob
/// is masked out.
pub fn check_axis_isolation(
    settings: &[ExperimentSetting],
    axis: ExperimentAxis,
    base: &RunConfig,
) -> Result<()> {
    let reference = isolation_fingerprint(&settings[0], axis, base);
    for setting in &settings[1..] {
        let fingerprint = isolation_fingerprint(setting, axis, base);
        if fingerprint != reference {
            return Err(Error::Config(format!(
                "setting `{}` differs from the baseline outside the `{}` axis",
                setting.name,
                axis.name()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SettingReport {
    pub name: String,
    pub report: MetricReport,
    /// DSC mean minus the baseline's DSC mean.
    pub delta_dsc: Option<f64>,
    /// ASSD mean minus the baseline's ASSD mean.
    pub delta_assd: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub axis: String,
    pub settings: Vec<SettingReport>,
}

impl ExperimentReport {
    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &std::path::Path) -> Result<ExperimentReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))
    }

    /// Plain-text comparison table, one row per setting.
    pub fn text_table(&self) -> String {
        let mut out = format!("axis: {}\n", self.axis);
        out.push_str("setting | DSC (±SEM) | ΔDSC | ASSD (±SEM) | ΔASSD\n");
        for s in &self.settings {
            let dsc = s
                .report
                .dsc
                .map_or("-".to_string(), |m| format!("{:.4} ± {:.4}", m.mean, m.sem));
            let assd = s
                .report
                .assd
                .map_or("-".to_string(), |m| format!("{:.4} ± {:.4}", m.mean, m.sem));
            let delta = |d: Option<f64>| d.map_or("-".to_string(), |v| format!("{v:+.4}"));
            out.push_str(&format!(
                "{} | {} | {} | {} | {}\n",
                s.name,
                dsc,
                delta(s.delta_dsc),
                assd,
                delta(s.delta_assd)
            ));
        }
        out
    }
}

/// Run one full pipeline per setting of the named axis, sharing seeds
/// and reusing the trained translator wherever the setting does not
/// change translator training.
pub fn run_experiment(
    axis_name: &str,
    dataset: &PhantomDataset,
    base_config: &RunConfig,
    device: &Device,
) -> Result<ExperimentReport> {
    let axis = parse_axis(axis_name)?;
    let settings = expand_axis(axis, base_config);
    check_axis_isolation(&settings, axis, base_config)?;
    let mut cache = TranslatorCache::new();
    let mut reports = Vec::with_capacity(settings.len());
    for setting in &settings {
        println!("stage=experiment axis={} setting={}", axis.name(), setting.name);
        let translator = cache.get_or_train(&dataset.output_train, &setting.config, device)?;
        let report = run_setting(
            translator,
            dataset,
            &setting.config,
            &setting.options,
            &setting.name,
            device,
        )?;
        reports.push(report);
    }

    let baseline_dsc = reports[0].dsc.map(|m| m.mean);
    let baseline_assd = reports[0].assd.map(|m| m.mean);
    let settings = settings
        .into_iter()
        .zip(reports)
        .map(|(setting, report)| SettingReport {
            delta_dsc: report
                .dsc
                .and_then(|m| baseline_dsc.map(|b| m.mean - b)),
            delta_assd: report
                .assd
                .and_then(|m| baseline_assd.map(|b| m.mean - b)),
            name: setting.name,
            report,
        })
        .collect();
    Ok(ExperimentReport {
        axis: axis.name().to_string(),
        settings,
    })
}
